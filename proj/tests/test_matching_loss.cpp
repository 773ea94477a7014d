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
#include <cmath>
#include <limits>

#include "doctest.h"
#include "oracles.hpp"
#include "pfrpn/matching_loss.hpp"
#include "pfrpn/numerics.hpp"

using namespace pfrpn;

namespace {

std::vector<std::size_t> pred_of_gt(const MatchResult& m) {
  std::vector<std::size_t> out;
  for (const auto& [p, g] : m.pairs) out.push_back(p);
  return out;
}

// Lexicographically smallest optimal assignment by exhaustive enumeration.
std::vector<std::size_t> brute_force_lex_optimal(const Tensor& cost) {
  const std::size_t p = cost.rows(), g = cost.cols();
  double best = 0.0;
  oracle::brute_force_assignment(cost.storage(), p, g, &best);
  std::vector<std::size_t> current(g), chosen;
  std::vector<char> used(p, 0);
  bool found = false;
  auto rec = [&](auto&& self, std::size_t j, double acc) -> void {
    if (found) return;
    if (j == g) {
      if (acc <= best + 1e-9) {
        chosen = current;
        found = true;
      }
      return;
    }
    for (std::size_t i = 0; i < p && !found; ++i) {
      if (used[i]) continue;
      used[i] = 1;
      current[j] = i;
      self(self, j + 1, acc + cost.at(i, j));
      used[i] = 0;
    }
  };
  rec(rec, 0, 0.0);
  return chosen;
}

BoxCCWH random_ccwh(Rng& rng) {
  return {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.05, 0.4), rng.uniform(0.05, 0.4)};
}

}  // namespace

TEST_CASE("assignment examples") {
  const MatchResult m = hungarian_match(Tensor::matrix(2, 2, {1, 2, 3, 1}));
  CHECK(m.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{0, 0}, {1, 1}});
  CHECK(assignment_cost(Tensor::matrix(2, 2, {1, 2, 3, 1}), m) == 2.0);
  CHECK(hungarian_match(Tensor::matrix(1, 1, {4.0})).pairs.size() == 1);
  const MatchResult col = hungarian_match(Tensor::matrix(3, 1, {5, 2, 9}));
  CHECK(col.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{1, 0}});
  CHECK(col.unmatched == std::vector<std::size_t>{0, 2});
  // all ties: lexicographic order gives the identity
  const MatchResult ties = hungarian_match(Tensor::matrix(3, 2, 1.0));
  CHECK(pred_of_gt(ties) == std::vector<std::size_t>{0, 1});
  CHECK(hungarian_match(Tensor::matrix(3, 0)).pairs.empty());
  CHECK(hungarian_match(Tensor::matrix(3, 0)).unmatched.size() == 3);
  CHECK_THROWS_AS(hungarian_match(Tensor::matrix(1, 2, {1, 2})), std::invalid_argument);
}

TEST_CASE("assignment agrees with exhaustive search (1000 trials)") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t g = static_cast<std::size_t>(rng.integer(1, 6));
    const std::size_t p = g + static_cast<std::size_t>(rng.integer(0, 3));
    Tensor cost = Tensor::matrix(p, g);
    const bool coarse = trial % 3 == 0;  // integer costs produce many ties
    for (double& c : cost.storage()) c = coarse ? static_cast<double>(rng.integer(0, 3)) : rng.uniform(-2, 5);
    const MatchResult m = hungarian_match(cost);
    double best = 0.0;
    oracle::brute_force_assignment(cost.storage(), p, g, &best);
    CHECK(std::abs(assignment_cost(cost, m) - best) < 1e-9);
    CHECK(pred_of_gt(m) == brute_force_lex_optimal(cost));
    CHECK(m.pairs.size() + m.unmatched.size() == p);

    // scaling the cost matrix leaves the pair set unchanged
    Tensor scaled = cost;
    const double s = rng.uniform(0.01, 100.0);
    for (double& c : scaled.storage()) c *= s;
    CHECK(hungarian_match(scaled).pairs == m.pairs);
  }
}

TEST_CASE("regression loss") {
  const std::vector<BoxCCWH> a{{0.5, 0.5, 0.2, 0.2}};
  const std::vector<BoxCCWH> b{{0.5, 0.5, 0.4, 0.2}};
  CHECK(regression_loss(a, a, {5.0, 2.0}) == 0.0);
  CHECK(std::abs(regression_loss(a, b, {1.0, 0.0}) - 0.2) < 1e-15);
  CHECK(regression_loss(std::vector<BoxCCWH>{}, std::vector<BoxCCWH>{}, {}) == 0.0);
  double prev = 0.0;
  for (double sep : {0.5, 1.0, 10.0, 1000.0}) {
    const double l = regression_loss(std::vector<BoxCCWH>{{0.0, 0.0, 0.1, 0.1}},
                                     std::vector<BoxCCWH>{{sep, sep, 0.1, 0.1}}, {0.0, 1.0});
    CHECK(l > prev);
    CHECK(l < 2.0);
    prev = l;
  }
  CHECK(prev > 1.99);
}

TEST_CASE("focal classification loss") {
  CHECK(std::abs(focal_element(0.0, true) - 0.25 * 0.25 * std::log(2.0)) < 1e-15);
  CHECK(std::abs(focal_element(0.0, true) - 0.04332169878499658) < 1e-15);
  CHECK(focal_element(40.0, true) < 1e-15);
  CHECK(focal_element(-40.0, false) < 1e-15);
  CHECK(focal_element(-40.0, true) > 9.0);

  MatchResult m;
  m.pairs = {{1, 0}};
  m.unmatched = {0, 2};
  const std::vector<double> logits{0.3, -0.2, 1.5};
  const double want = focal_element(0.3, false) + focal_element(-0.2, true) + focal_element(1.5, false);
  CHECK(std::abs(classification_loss(logits, m) - want) < 1e-15);
  MatchResult none;
  CHECK(std::abs(classification_loss(logits, none) -
                 (focal_element(0.3, false) + focal_element(-0.2, false) + focal_element(1.5, false))) < 1e-15);
}

TEST_CASE("total objective") {
  const LossBreakdown l = total_loss(1, 1, 1, 1, 5);
  CHECK(l.total == 8.0);
  CHECK(total_loss(0, 0, 0, 0, 5).total == 0.0);
  CHECK(total_loss(0.3, 0.2, 0.1, 123.0, 0.0).total == total_loss(0.3, 0.2, 0.1, -7.0, 0.0).total);
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const double r = rng.uniform(), c = rng.uniform(), t = rng.uniform(), ctr = rng.uniform();
    const double lam = rng.uniform(0, 10);
    const LossBreakdown b = total_loss(r, c, t, ctr, lam);
    CHECK(std::abs(b.total - (b.reg + b.cls + b.rt + b.lambda * b.ctr)) < 1e-12);
    CHECK(std::abs(total_loss(r, c, t, ctr, lam + 1.0).total - b.total - ctr) < 1e-12);
  }
  CHECK_THROWS_WITH_AS(total_loss(std::nan(""), 0, 0, 0, 5), doctest::Contains("regression"), TrainingStepError);
  CHECK_THROWS_WITH_AS(total_loss(0, 0, 0, std::numeric_limits<double>::infinity(), 5),
                       doctest::Contains("centerness"), TrainingStepError);
}

TEST_CASE("matching cost prefers the overlapping confident prediction") {
  const std::vector<BoxCCWH> gt{{0.3, 0.3, 0.2, 0.2}, {0.7, 0.7, 0.3, 0.2}};
  const std::vector<BoxCCWH> preds{{0.7, 0.7, 0.3, 0.2}, {0.5, 0.5, 0.2, 0.2}, {0.3, 0.31, 0.2, 0.2}};
  const std::vector<double> logits{2.0, 2.0, 1.0};
  const Tensor cost = matching_cost(logits, preds, gt);
  const MatchResult m = hungarian_match(cost);
  CHECK(m.pairs == std::vector<std::pair<std::size_t, std::size_t>>{{2, 0}, {0, 1}});
  // entries follow the weighted sum directly
  const double cls = focal_element(2.0, true) - focal_element(2.0, false);
  CHECK(std::abs(cost.at(0, 1) - 2.0 * cls) < 1e-12);
}

TEST_CASE("differentiable losses agree with plain forms and pass finite differences") {
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t p = 7, g = 3;
    std::vector<BoxCCWH> preds, gt;
    std::vector<double> logits;
    Tensor boxes = Tensor::matrix(p, 4);
    for (std::size_t i = 0; i < p; ++i) {
      preds.push_back(random_ccwh(rng));
      boxes.at(i, 0) = preds[i].cx;
      boxes.at(i, 1) = preds[i].cy;
      boxes.at(i, 2) = preds[i].w;
      boxes.at(i, 3) = preds[i].h;
      logits.push_back(rng.uniform(-3, 3));
    }
    for (std::size_t j = 0; j < g; ++j) gt.push_back(random_ccwh(rng));
    const MatchResult m = hungarian_match(matching_cost(logits, preds, gt));
    const RegressionWeights w;

    std::vector<BoxCCWH> mp, mg;
    for (const auto& [i, j] : m.pairs) {
      mp.push_back(preds[i]);
      mg.push_back(gt[j]);
    }
    Graph graph;
    Var bv = graph.constant(boxes);
    CHECK(std::abs(regression_loss(bv, gt, m, w).value()[0] - regression_loss(mp, mg, w)) < 1e-12);
    Var lv = graph.constant(Tensor::matrix(p, 1, logits));
    CHECK(std::abs(classification_loss(lv, m).value()[0] - classification_loss(logits, m)) < 1e-12);

    auto r = finite_difference_check([&](Graph&, Var x) { return regression_loss(x, gt, m, w); }, boxes);
    CHECK(r.max_error < 1e-3);
    auto c = finite_difference_check([&](Graph&, Var x) { return classification_loss(x, m); },
                                     Tensor::matrix(p, 1, logits));
    CHECK(c.max_error < 1e-3);
  }
}

TEST_CASE("row-wise GIoU matches the scalar GIoU") {
  Rng rng(12);
  Tensor a = Tensor::matrix(50, 4), b = Tensor::matrix(50, 4);
  std::vector<double> want;
  for (std::size_t i = 0; i < 50; ++i) {
    const BoxCCWH x = random_ccwh(rng), y = random_ccwh(rng);
    a.at(i, 0) = x.cx; a.at(i, 1) = x.cy; a.at(i, 2) = x.w; a.at(i, 3) = x.h;
    b.at(i, 0) = y.cx; b.at(i, 1) = y.cy; b.at(i, 2) = y.w; b.at(i, 3) = y.h;
    want.push_back(giou(to_xyxy(x), to_xyxy(y)));
  }
  Graph g;
  const Tensor& got = giou_rows(g.constant(a), g.constant(b)).value();
  for (std::size_t i = 0; i < 50; ++i) CHECK(std::abs(got[i] - want[i]) < 1e-12);
}
