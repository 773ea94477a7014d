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

// Centerness-guided query selection. Every memory token gets a
// classification score sigmoid(token . embedding) and a center score from a
// small MLP; the product ranks the tokens and the best N become queries.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pfrpn/features.hpp"
#include "pfrpn/geometry.hpp"
#include "pfrpn/rng.hpp"

namespace pfrpn {

template <typename T>
struct CenterNetWeights {
  T w1, b1, w2, b2;  // C -> C -> 1

  template <typename Self, typename F>
  static void each(Self& s, F&& f) {
    f("w1", s.w1);
    f("b1", s.b1);
    f("w2", s.w2);
    f("b2", s.b2);
  }
};

using CenterNetParams = CenterNetWeights<Tensor>;
using CenterNetVars = CenterNetWeights<Var>;

CenterNetParams init_center_net(std::size_t channels, Rng& rng);

struct QueryToken {
  std::size_t index = 0;  // row in the memory
  Point position;         // normalized cell center
  int level = 1;
  double cls_score = 0.0;
  double center_score = 0.0;
  double combined = 0.0;
};

double sigmoid(double x);

/// Scores every row of `tokens` (M x C). `positions` and `levels` give the
/// cell center and source level of each row. The class logit is
/// logit_scale * (token . embedding).
std::vector<QueryToken> score_queries(const Tensor& tokens, std::span<const Point> positions,
                                      std::span<const int> levels, const Tensor& embedding,
                                      const CenterNetParams& params, double logit_scale = 1.0);

/// Top-N by combined score, descending, ties to the smaller token index.
std::vector<QueryToken> select_queries(std::span<const QueryToken> scored, std::size_t n);

/// Same ordering rule on a plain score list; returns row indices.
std::vector<std::size_t> select_top(std::span<const double> scores, std::size_t n);

/// Mean |g - c| over `positives`; 0 for an empty set.
double centerness_loss(std::span<const double> predicted, std::span<const double> targets,
                       std::span<const std::size_t> positives);

struct CenterTargets {
  std::vector<double> targets;         // one per token, 0 outside every box
  std::vector<std::size_t> positives;  // tokens whose center lies in a box
  /// Index of the box supervising each token, or -1.
  std::vector<int> box_of;
};

/// Each token inside at least one box is supervised by the smallest such box.
CenterTargets center_targets(std::span<const Point> positions, std::span<const BoxXYXY> boxes);

// Differentiable forms.

/// Center logits (M x 1); apply ad::sigmoid for scores.
Var center_logits(Var tokens, const CenterNetVars& params);
/// logit_scale * tokens . embedding^T (M x 1).
Var classification_logits(Var tokens, Var embedding, double logit_scale = 1.0);
Var centerness_loss(Var predicted, const CenterTargets& targets);

}  // namespace pfrpn
