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

// Sparse image-aware adapter: an MoE router scores the globally pooled
// feature of every pyramid level, the top-k levels are kept, and the
// learnable embedding attends to each kept level (pooled token followed by
// the flattened grid). The per-level attention outputs are mixed with the
// softmax-normalized router weights of the kept levels.
#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pfrpn/features.hpp"
#include "pfrpn/rng.hpp"

namespace pfrpn {

template <typename T>
struct SiaWeights {
  // Router: C -> 2C -> 1 with ReLU.
  T router_w1, router_b1, router_w2, router_b2;
  // Single-head attention projections, each C x C.
  T wq, wk, wv, wo;

  template <typename Self, typename F>
  static void each(Self& s, F&& f) {
    f("router_w1", s.router_w1);
    f("router_b1", s.router_b1);
    f("router_w2", s.router_w2);
    f("router_b2", s.router_b2);
    f("wq", s.wq);
    f("wk", s.wk);
    f("wv", s.wv);
    f("wo", s.wo);
  }
};

using SiaParams = SiaWeights<Tensor>;
using SiaVars = SiaWeights<Var>;

SiaParams init_sia_params(std::size_t channels, Rng& rng);

struct RouterOutput {
  std::vector<double> raw_weights;   // one per level
  std::vector<std::size_t> selected; // positions into the level list, best first
  std::vector<double> normalized;    // softmax over the selected raw weights
};

/// Top-k selection and softmax normalization of already computed raw weights.
RouterOutput select_levels(std::span<const double> raw_weights, std::size_t k);

std::vector<Tensor> pool_levels(std::span<const LevelFeatures> levels);

RouterOutput route_and_select(std::span<const Tensor> pooled, const SiaParams& params,
                              std::size_t k);

Tensor sia_update(const Tensor& embedding, std::span<const LevelFeatures> levels,
                  const RouterOutput& routing, const SiaParams& params);

/// Population standard deviation of the raw router weights.
double router_balance_loss(std::span<const double> raw_weights);

// Differentiable forms.

Var pool_level(Var grid);
/// Router score of one pooled 1 x C vector -> 1 x 1.
Var router_score(Var pooled, const SiaVars& params);
/// Attn(query, [pooled; grid]) including the output projection -> 1 x C.
Var level_attention(Var query, Var pooled, Var grid, const SiaVars& params);

struct SiaResult {
  Var refined;              // 1 x C
  std::vector<Var> raw;     // 1 x 1 router score per level
  RouterOutput routing;
};

/// Runs the adapter on `levels`. When `frozen` is given, its level selection
/// is reused instead of the top-k of the current router scores.
SiaResult sia_forward(Var embedding, std::span<const LevelVar> levels, const SiaVars& params,
                      std::size_t k, const RouterOutput* frozen = nullptr);

Var router_balance_loss(std::span<const Var> raw_weights);

/// Cosine similarity between `embedding` and every cell of `level`.
std::vector<double> similarity_map(std::span<const double> embedding, const LevelFeatures& level);

/// Writes level<i>_similarity.pgm (min-max normalized) for every level.
void write_similarity_heatmaps(const Tensor& embedding, std::span<const LevelFeatures> levels,
                               const std::filesystem::path& dir, const std::string& prefix);

}  // namespace pfrpn
