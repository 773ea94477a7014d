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
#include "pfrpn/sia.hpp"

#include <cmath>
#include <stdexcept>

#include "pfrpn/image.hpp"
#include "pfrpn/numerics.hpp"

namespace pfrpn {

SiaParams init_sia_params(std::size_t channels, Rng& rng) {
  const std::size_t c = channels;
  SiaParams p;
  p.router_w1 = he_normal(c, 2 * c, rng);
  p.router_b1 = Tensor::matrix(1, 2 * c);
  p.router_w2 = glorot_normal(2 * c, 1, rng);
  p.router_b2 = Tensor::matrix(1, 1);
  p.wq = glorot_normal(c, c, rng);
  p.wk = glorot_normal(c, c, rng);
  p.wv = glorot_normal(c, c, rng);
  p.wo = glorot_normal(c, c, rng);
  return p;
}

RouterOutput select_levels(std::span<const double> raw_weights, std::size_t k) {
  RouterOutput out;
  out.raw_weights.assign(raw_weights.begin(), raw_weights.end());
  out.selected = topk_indices(raw_weights, k);
  std::vector<double> chosen;
  for (std::size_t i : out.selected) chosen.push_back(raw_weights[i]);
  out.normalized = softmax(chosen);
  return out;
}

Var pool_level(Var grid) { return ad::mean_rows(grid); }

Var router_score(Var pooled, const SiaVars& p) {
  Var h = ad::relu(ad::add_row(ad::matmul(pooled, p.router_w1), p.router_b1));
  return ad::add(ad::matmul(h, p.router_w2), p.router_b2);
}

Var level_attention(Var query, Var pooled, Var grid, const SiaVars& p) {
  // q K^T = (q Wk^T) T^T and a V = (a T) Wv with T = [pooled; grid], which
  // avoids projecting every grid token.
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(query.cols()));
  Var q = ad::matmul(query, p.wq);
  Var qk = ad::matmul_nt(q, p.wk);
  const Var parts[] = {pooled, grid};
  Var tokens = ad::concat_rows(parts);
  Var weights = ad::softmax_rows(ad::scale(ad::matmul_nt(qk, tokens), inv_sqrt_c));
  Var context = ad::matmul(weights, tokens);
  return ad::matmul(ad::matmul(context, p.wv), p.wo);
}

SiaResult sia_forward(Var embedding, std::span<const LevelVar> levels, const SiaVars& params,
                      std::size_t k, const RouterOutput* frozen) {
  if (levels.empty()) throw std::invalid_argument("sia: no levels");
  if (k < 1 || k > levels.size()) throw std::invalid_argument("sia: k outside [1, #levels]");
  SiaResult result;
  std::vector<Var> pooled;
  std::vector<double> raw_values;
  for (const LevelVar& lv : levels) {
    pooled.push_back(pool_level(lv.grid));
    result.raw.push_back(router_score(pooled.back(), params));
    raw_values.push_back(result.raw.back().value()[0]);
  }
  if (frozen != nullptr) {
    result.routing = *frozen;
    result.routing.raw_weights = raw_values;
    if (result.routing.selected.size() != k) throw std::invalid_argument("sia: frozen routing has wrong k");
  } else {
    result.routing = select_levels(raw_values, k);
  }
  std::vector<Var> chosen;
  for (std::size_t i : result.routing.selected) chosen.push_back(result.raw[i]);
  Var mix = ad::softmax_rows(ad::concat_cols(chosen));  // 1 x k
  std::vector<double> mix_values(mix.value().values().begin(), mix.value().values().end());
  result.routing.normalized = mix_values;

  Var refined;
  for (std::size_t j = 0; j < result.routing.selected.size(); ++j) {
    const std::size_t li = result.routing.selected[j];
    Var attn = level_attention(embedding, pooled[li], levels[li].grid, params);
    Var weighted = ad::scale_by(ad::slice_cols(mix, j, j + 1), attn);
    refined = j == 0 ? weighted : ad::add(refined, weighted);
  }
  result.refined = refined;
  return result;
}

Var router_balance_loss(std::span<const Var> raw_weights) {
  return ad::std_all(ad::concat_cols(raw_weights));
}

namespace {

std::vector<LevelVar> as_constants(Graph& g, std::span<const LevelFeatures> levels) {
  std::vector<LevelVar> out;
  for (const auto& lf : levels) {
    out.push_back({lf.level, lf.height, lf.width, lf.stride, g.constant(lf.grid)});
  }
  return out;
}

}  // namespace

std::vector<Tensor> pool_levels(std::span<const LevelFeatures> levels) {
  std::vector<Tensor> out;
  for (const auto& lf : levels) {
    Graph g;
    out.push_back(pool_level(g.constant(lf.grid)).value());
  }
  return out;
}

RouterOutput route_and_select(std::span<const Tensor> pooled, const SiaParams& params,
                              std::size_t k) {
  Graph g;
  const SiaVars vars = bind_weights<SiaWeights>(g, params, false);
  std::vector<double> raw;
  for (const Tensor& p : pooled) raw.push_back(router_score(g.constant(p), vars).value()[0]);
  return select_levels(raw, k);
}

Tensor sia_update(const Tensor& embedding, std::span<const LevelFeatures> levels,
                  const RouterOutput& routing, const SiaParams& params) {
  Graph g;
  const SiaVars vars = bind_weights<SiaWeights>(g, params, false);
  const auto lv = as_constants(g, levels);
  return sia_forward(g.constant(embedding), lv, vars, routing.selected.size(), &routing)
      .refined.value();
}

double router_balance_loss(std::span<const double> raw_weights) {
  if (raw_weights.empty()) throw std::invalid_argument("router_balance_loss: no weights");
  double mean = 0.0;
  for (double w : raw_weights) mean += w;
  mean /= static_cast<double>(raw_weights.size());
  double var = 0.0;
  for (double w : raw_weights) var += (w - mean) * (w - mean);
  return std::sqrt(var / static_cast<double>(raw_weights.size()));
}

std::vector<double> similarity_map(std::span<const double> embedding, const LevelFeatures& level) {
  std::vector<double> out(level.height * level.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = cosine_similarity(embedding, level.grid.row_span(i));
  }
  return out;
}

void write_similarity_heatmaps(const Tensor& embedding, std::span<const LevelFeatures> levels,
                               const std::filesystem::path& dir, const std::string& prefix) {
  std::filesystem::create_directories(dir);
  for (const auto& lf : levels) {
    write_pgm_normalized(similarity_map(embedding.values(), lf), lf.width, lf.height,
                         dir / (prefix + "level" + std::to_string(lf.level) + "_similarity.pgm"));
  }
}

}  // namespace pfrpn
