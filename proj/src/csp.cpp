// Copyright 2026 The pfrpn Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include "pfrpn/csp.hpp"

#include <algorithm>
#include <stdexcept>

#include "pfrpn/image.hpp"
#include "pfrpn/numerics.hpp"

namespace pfrpn {

void CspConfig::validate() const {
  if (!(delta >= 0.0 && delta < 1.0)) throw std::invalid_argument("csp config: delta must be in [0, 1)");
  for (int l : level_order) {
    if (l < 1) throw std::invalid_argument("csp config: level_order entries must be >= 1");
  }
}

std::vector<std::uint8_t> similarity_mask(std::span<const double> embedding,
                                          const LevelFeatures& level, double delta) {
  if (embedding.size() != level.grid.cols()) {
    throw std::invalid_argument("similarity_mask: channel mismatch");
  }
  std::vector<std::uint8_t> mask(level.grid.rows());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = cosine_similarity(embedding, level.grid.row_span(i)) > delta ? 1 : 0;
  }
  return mask;
}

Tensor masked_average_pool(std::span<const std::uint8_t> mask, const LevelFeatures& level) {
  if (mask.size() != level.grid.rows()) {
    throw std::invalid_argument("masked_average_pool: mask size mismatch");
  }
  const std::size_t c = level.grid.cols();
  Tensor out = Tensor::matrix(1, c);
  std::size_t count = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    ++count;
    for (std::size_t j = 0; j < c; ++j) out[j] += level.grid.at(i, j);
  }
  if (count > 0) {
    for (double& v : out.storage()) v /= static_cast<double>(count);
  }
  return out;
}

namespace {

std::size_t find_level(std::span<const LevelVar> levels, int level) {
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i].level == level) return i;
  }
  throw std::invalid_argument("csp: level " + std::to_string(level) + " not provided");
}

}  // namespace

Var csp_refine(Var embedding, std::span<const LevelVar> levels, const CspConfig& config,
               MaskRecord* record, const MaskRecord* frozen) {
  config.validate();
  Graph& g = *embedding.graph;
  Var state = embedding;
  std::size_t visit = 0;
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    for (int level : config.level_order) {
      const LevelVar& lv = levels[find_level(levels, level)];
      const Tensor& grid = lv.grid.value();
      const std::size_t cells = grid.rows();
      MaskEntry entry;
      entry.iteration = it;
      entry.level = level;
      entry.height = lv.height;
      entry.width = lv.width;
      entry.state.assign(state.value().values().begin(), state.value().values().end());
      if (frozen != nullptr) {
        if (visit >= frozen->size() || (*frozen)[visit].mask.size() != cells) {
          throw std::invalid_argument("csp: frozen mask record does not match the sweep");
        }
        entry.mask = (*frozen)[visit].mask;
      } else {
        entry.mask.resize(cells);
        for (std::size_t i = 0; i < cells; ++i) {
          entry.mask[i] = cosine_similarity(entry.state, grid.row_span(i)) > config.delta ? 1 : 0;
        }
      }
      entry.activated = static_cast<std::size_t>(std::count(entry.mask.begin(), entry.mask.end(), 1));
      if (entry.activated > 0) {
        Tensor weights = Tensor::matrix(1, cells);
        const double w = 1.0 / static_cast<double>(entry.activated);
        for (std::size_t i = 0; i < cells; ++i) weights[i] = entry.mask[i] ? w : 0.0;
        state = ad::add(state, ad::matmul(g.constant(std::move(weights)), lv.grid));
      }
      if (record != nullptr) record->push_back(std::move(entry));
      ++visit;
    }
  }
  return state;
}

CspResult csp_refine(const Tensor& embedding, std::span<const LevelFeatures> levels,
                     const CspConfig& config) {
  Graph g;
  std::vector<LevelVar> lv;
  for (const auto& lf : levels) lv.push_back({lf.level, lf.height, lf.width, lf.stride, g.constant(lf.grid)});
  CspResult result;
  result.refined = csp_refine(g.constant(embedding), lv, config, &result.masks).value();
  return result;
}

void write_mask_overlays(const MaskRecord& masks, const std::filesystem::path& dir,
                         const std::string& prefix) {
  std::filesystem::create_directories(dir);
  for (const auto& m : masks) {
    Image img(m.width, m.height, 1);
    for (std::size_t i = 0; i < m.mask.size(); ++i) img.pixels[i] = m.mask[i] ? 1.0 : 0.0;
    write_pnm(img, dir / (prefix + "iter" + std::to_string(m.iteration) + "_level" +
                          std::to_string(m.level) + "_mask.pgm"));
  }
}

}  // namespace pfrpn
