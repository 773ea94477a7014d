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
#include "pfrpn/cgqs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace pfrpn {

CenterNetParams init_center_net(std::size_t channels, Rng& rng) {
  CenterNetParams p;
  p.w1 = he_normal(channels, channels, rng);
  p.b1 = Tensor::matrix(1, channels);
  p.w2 = glorot_normal(channels, 1, rng);
  p.b2 = Tensor::matrix(1, 1);
  return p;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var center_logits(Var tokens, const CenterNetVars& p) {
  Var h = ad::relu(ad::add_row(ad::matmul(tokens, p.w1), p.b1));
  return ad::add_row(ad::matmul(h, p.w2), p.b2);
}

Var classification_logits(Var tokens, Var embedding, double logit_scale) {
  Var dot = ad::matmul_nt(tokens, embedding);
  return logit_scale == 1.0 ? dot : ad::scale(dot, logit_scale);
}

std::vector<QueryToken> score_queries(const Tensor& tokens, std::span<const Point> positions,
                                      std::span<const int> levels, const Tensor& embedding,
                                      const CenterNetParams& params, double logit_scale) {
  const std::size_t m = tokens.rows();
  if (positions.size() != m || levels.size() != m) {
    throw std::invalid_argument("score_queries: positions/levels must match token count");
  }
  if (embedding.size() != tokens.cols()) throw std::invalid_argument("score_queries: channel mismatch");
  Graph g;
  const CenterNetVars vars = bind_weights<CenterNetWeights>(g, params, false);
  Var t = g.constant(tokens);
  const Tensor& center = center_logits(t, vars).value();
  const Tensor& cls = classification_logits(t, g.constant(embedding), logit_scale).value();
  std::vector<QueryToken> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    QueryToken& q = out[i];
    q.index = i;
    q.position = positions[i];
    q.level = levels[i];
    q.cls_score = sigmoid(cls[i]);
    q.center_score = sigmoid(center[i]);
    q.combined = q.cls_score * q.center_score;
  }
  return out;
}

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

std::vector<std::size_t> select_top(std::span<const double> scores, std::size_t n) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t take = std::min(n, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(take), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      // NaN ranks last so a diverged score cannot break the ordering.
                      const double sa = std::isnan(scores[a]) ? -kInf : scores[a];
                      const double sb = std::isnan(scores[b]) ? -kInf : scores[b];
                      if (sa != sb) return sa > sb;
                      return a < b;
                    });
  idx.resize(take);
  return idx;
}

std::vector<QueryToken> select_queries(std::span<const QueryToken> scored, std::size_t n) {
  if (n < 1) throw std::invalid_argument("select_queries: N must be >= 1");
  std::vector<double> combined;
  combined.reserve(scored.size());
  for (const auto& q : scored) combined.push_back(q.combined);
  std::vector<QueryToken> out;
  for (std::size_t i : select_top(combined, n)) out.push_back(scored[i]);
  return out;
}

double centerness_loss(std::span<const double> predicted, std::span<const double> targets,
                       std::span<const std::size_t> positives) {
  if (predicted.size() != targets.size()) {
    throw std::invalid_argument("centerness_loss: length mismatch");
  }
  double total = 0.0;
  for (std::size_t i : positives) {
    if (i >= predicted.size()) throw std::invalid_argument("centerness_loss: positive index out of range");
    total += std::abs(predicted[i] - targets[i]);
  }
  return total / static_cast<double>(std::max<std::size_t>(1, positives.size()));
}

CenterTargets center_targets(std::span<const Point> positions, std::span<const BoxXYXY> boxes) {
  CenterTargets out;
  out.targets.assign(positions.size(), 0.0);
  out.box_of.assign(positions.size(), -1);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    int best = -1;
    for (std::size_t b = 0; b < boxes.size(); ++b) {
      if (!contains(boxes[b], positions[i])) continue;
      if (best < 0 || boxes[b].area() < boxes[static_cast<std::size_t>(best)].area()) {
        best = static_cast<int>(b);
      }
    }
    if (best < 0) continue;
    out.box_of[i] = best;
    out.targets[i] = centerness_target(positions[i], boxes[static_cast<std::size_t>(best)]);
    out.positives.push_back(i);
  }
  return out;
}

Var centerness_loss(Var predicted, const CenterTargets& targets) {
  Graph& g = *predicted.graph;
  if (predicted.value().size() != targets.targets.size()) {
    throw std::invalid_argument("centerness_loss: length mismatch");
  }
  if (targets.positives.empty()) return g.constant(Tensor::scalar(0.0));
  Var chosen = ad::gather_rows(predicted, targets.positives);
  Tensor goal = Tensor::matrix(targets.positives.size(), 1);
  for (std::size_t i = 0; i < targets.positives.size(); ++i) {
    goal[i] = targets.targets[targets.positives[i]];
  }
  Var diff = ad::abs(ad::sub(chosen, g.constant(std::move(goal))));
  return ad::mean(diff);
}

}  // namespace pfrpn
