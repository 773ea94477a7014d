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
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "pfrpn/autodiff.hpp"
#include "pfrpn/tensor.hpp"

namespace pfrpn {

/// Norm floor used by cosine_similarity.
inline constexpr double kCosineEps = 1e-12;

std::vector<double> softmax(std::span<const double> logits);

/// Cosine of the angle between a and b; 0 when either operand has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// softmax(query . keys^T / sqrt(C)) . values for a single 1 x C query.
Tensor scaled_dot_attention(const Tensor& query, const Tensor& keys, const Tensor& values);

/// Indices of the k largest scores in descending order; ties go to the
/// smaller index.
std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k);

/// |analytic - numeric| / max(1, |analytic|).
double relative_gradient_error(double analytic, double numeric);

/// Central difference (f(x+h) - f(x-h)) / 2h, perturbing `coordinate` in place
/// and restoring it afterwards. Throws std::runtime_error when either
/// evaluation is non-finite.
double central_difference(const std::function<double()>& eval, double& coordinate,
                          double h, std::size_t coordinate_index = 0);

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t worst_coordinate = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Builds the scalar `f(x)` on a fresh graph, back-propagates, and compares
/// every requested coordinate of dx against central differences. An empty
/// `coordinates` span checks all of them.
GradCheckResult finite_difference_check(const std::function<Var(Graph&, Var)>& f,
                                        const Tensor& point, double h = 1e-5,
                                        std::span<const std::size_t> coordinates = {});

}  // namespace pfrpn
