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

// Cascade self-prompt: the embedding is repeatedly refined by adding the
// mean of the grid cells it already resembles (cosine > delta), visiting the
// levels deepest first. One iteration is one full sweep over level_order.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "pfrpn/features.hpp"

namespace pfrpn {

struct CspConfig {
  double delta = 0.3;
  std::size_t iterations = 3;
  std::vector<int> level_order = {4, 3, 2, 1};

  void validate() const;
};

struct MaskEntry {
  std::size_t iteration = 0;  // 1-based sweep number
  int level = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> mask;
  std::size_t activated = 0;
  /// Embedding state the mask was computed from.
  std::vector<double> state;
};

using MaskRecord = std::vector<MaskEntry>;

/// cell i is set iff cosine(embedding, cell i) > delta.
std::vector<std::uint8_t> similarity_mask(std::span<const double> embedding,
                                          const LevelFeatures& level, double delta);

/// Mean of the masked cells as a 1 x C tensor; zero vector for an empty mask.
Tensor masked_average_pool(std::span<const std::uint8_t> mask, const LevelFeatures& level);

struct CspResult {
  Tensor refined;
  MaskRecord masks;
};

CspResult csp_refine(const Tensor& embedding, std::span<const LevelFeatures> levels,
                     const CspConfig& config);

/// Differentiable refinement; masks are constants w.r.t. the gradient. With
/// `frozen` the recorded masks are replayed instead of recomputed.
Var csp_refine(Var embedding, std::span<const LevelVar> levels, const CspConfig& config,
               MaskRecord* record = nullptr, const MaskRecord* frozen = nullptr);

/// Writes iter<k>_level<i>_mask.pgm (activated cells white) per mask entry.
void write_mask_overlays(const MaskRecord& masks, const std::filesystem::path& dir,
                         const std::string& prefix);

}  // namespace pfrpn
