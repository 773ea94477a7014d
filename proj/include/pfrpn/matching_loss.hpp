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

// Set-prediction objective: one-to-one assignment of predictions to ground
// truth, box regression (L1 + GIoU) and focal objectness classification.
#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "pfrpn/autodiff.hpp"
#include "pfrpn/geometry.hpp"

namespace pfrpn {

struct MatchResult {
  /// (prediction, gt) pairs, ordered by gt index.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<std::size_t> unmatched;  // ascending prediction indices
};

/// Minimum-cost assignment of every GT column to a distinct prediction row
/// of the P x G `cost` matrix. Among optimal assignments the one whose
/// (gt, prediction) pair list is lexicographically smallest is returned.
MatchResult hungarian_match(const Tensor& cost);

/// Total cost of an assignment.
double assignment_cost(const Tensor& cost, const MatchResult& match);

struct MatchCostWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
  double alpha = 0.25;
  double gamma = 2.0;
};

/// P x G matching cost: cls * focal cost + l1 * L1(ccwh) + giou * (1 - GIoU).
Tensor matching_cost(std::span<const double> logits, std::span<const BoxCCWH> predictions,
                     std::span<const BoxCCWH> ground_truth, const MatchCostWeights& w = {});

/// Sigmoid focal loss of one logit against a binary target.
double focal_element(double logit, bool positive, double alpha = 0.25, double gamma = 2.0);

struct RegressionWeights {
  double l1 = 5.0;
  double giou = 2.0;
};

/// Mean over pairs of l1 * sum|diff| + giou * (1 - GIoU); 0 for no pairs.
double regression_loss(std::span<const BoxCCWH> predicted, std::span<const BoxCCWH> target,
                       const RegressionWeights& w);

/// Focal loss summed over all predictions (matched ones are positives),
/// divided by max(1, #matched).
double classification_loss(std::span<const double> logits, const MatchResult& match,
                           double alpha = 0.25, double gamma = 2.0);

class TrainingStepError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossBreakdown {
  double reg = 0.0;
  double cls = 0.0;
  double rt = 0.0;
  double ctr = 0.0;
  double lambda = 5.0;
  double total = 0.0;
};

/// total = reg + cls + rt + lambda * ctr; throws TrainingStepError naming the
/// first non-finite part.
LossBreakdown total_loss(double reg, double cls, double rt, double ctr, double lambda);

// Differentiable forms. `boxes` is P x 4 (cx, cy, w, h); `logits` is P x 1.

/// GIoU per row of two N x 4 ccwh tensors -> N x 1.
Var giou_rows(Var predicted, Var target);
Var regression_loss(Var boxes, std::span<const BoxCCWH> ground_truth, const MatchResult& match,
                    const RegressionWeights& w);
Var classification_loss(Var logits, const MatchResult& match, double alpha = 0.25,
                        double gamma = 2.0);

}  // namespace pfrpn
