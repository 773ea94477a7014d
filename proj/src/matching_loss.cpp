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
#include "pfrpn/matching_loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pfrpn {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Shortest augmenting path assignment with potentials. `a` is n x m (n <= m),
// row-major; returns the column of every row.
std::vector<std::size_t> solve_assignment(const std::vector<double>& a, std::size_t n, std::size_t m) {
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> col_of_row(n, 0);
  for (std::size_t j = 1; j <= m; ++j) {
    if (p[j] != 0) col_of_row[p[j] - 1] = j - 1;
  }
  return col_of_row;
}

// Optimal cost of assigning the remaining GT columns to the remaining
// prediction rows of `cost`.
double optimal_cost(const Tensor& cost, const std::vector<char>& row_free,
                    const std::vector<char>& col_free) {
  std::vector<std::size_t> rows, cols;
  for (std::size_t i = 0; i < row_free.size(); ++i) {
    if (row_free[i]) rows.push_back(i);
  }
  for (std::size_t j = 0; j < col_free.size(); ++j) {
    if (col_free[j]) cols.push_back(j);
  }
  if (cols.empty()) return 0.0;
  // GT is the short side.
  std::vector<double> a(cols.size() * rows.size());
  for (std::size_t g = 0; g < cols.size(); ++g) {
    for (std::size_t r = 0; r < rows.size(); ++r) a[g * rows.size() + r] = cost.at(rows[r], cols[g]);
  }
  const auto assign = solve_assignment(a, cols.size(), rows.size());
  double total = 0.0;
  for (std::size_t g = 0; g < cols.size(); ++g) total += a[g * rows.size() + assign[g]];
  return total;
}

}  // namespace

MatchResult hungarian_match(const Tensor& cost) {
  const std::size_t p = cost.rows();
  const std::size_t g = cost.rank() < 2 ? 0 : cost.cols();
  if (p < g) {
    throw std::invalid_argument("hungarian_match: fewer predictions (" + std::to_string(p) +
                                ") than ground-truth boxes (" + std::to_string(g) + ")");
  }
  double scale = 1.0;
  for (double c : cost.values()) {
    if (!std::isfinite(c)) throw std::invalid_argument("hungarian_match: non-finite cost");
    scale = std::max(scale, std::abs(c));
  }
  MatchResult out;
  std::vector<char> row_free(p, 1), col_free(g, 1);
  if (g > 0) {
    // Fix pairs in lexicographic order, keeping a pair whenever it is part of
    // some optimal completion. Costs equal within rounding count as ties.
    const double tol = 1e-9 * scale * static_cast<double>(g);
    double remaining = optimal_cost(cost, row_free, col_free);
    for (std::size_t j = 0; j < g; ++j) {
      col_free[j] = 0;
      bool fixed = false;
      for (std::size_t i = 0; i < p && !fixed; ++i) {
        if (!row_free[i]) continue;
        row_free[i] = 0;
        const double rest = optimal_cost(cost, row_free, col_free);
        if (cost.at(i, j) + rest <= remaining + tol) {
          out.pairs.emplace_back(i, j);
          remaining = rest;
          fixed = true;
        } else {
          row_free[i] = 1;
        }
      }
      if (!fixed) throw std::logic_error("hungarian_match: failed to extend an optimal assignment");
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    if (row_free[i]) out.unmatched.push_back(i);
  }
  return out;
}

double assignment_cost(const Tensor& cost, const MatchResult& match) {
  double total = 0.0;
  for (const auto& [i, j] : match.pairs) total += cost.at(i, j);
  return total;
}

double focal_element(double logit, bool positive, double alpha, double gamma) {
  Graph g;
  Tensor t = Tensor::scalar(positive ? 1.0 : 0.0);
  return ad::sigmoid_focal(g.constant(Tensor::scalar(logit)), t, alpha, gamma).value()[0];
}

namespace {

double l1_ccwh(const BoxCCWH& a, const BoxCCWH& b) {
  return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) + std::abs(a.h - b.h);
}

}  // namespace

Tensor matching_cost(std::span<const double> logits, std::span<const BoxCCWH> predictions,
                     std::span<const BoxCCWH> ground_truth, const MatchCostWeights& w) {
  if (logits.size() != predictions.size()) {
    throw std::invalid_argument("matching_cost: logits and boxes differ in length");
  }
  const std::size_t p = predictions.size();
  const std::size_t g = ground_truth.size();
  Tensor cost = Tensor::matrix(p, g);
  for (std::size_t i = 0; i < p; ++i) {
    // Positive minus negative focal term: how much cheaper it is to call
    // this prediction an object.
    const double cls = focal_element(logits[i], true, w.alpha, w.gamma) -
                       focal_element(logits[i], false, w.alpha, w.gamma);
    const BoxXYXY pb = to_xyxy(predictions[i]);
    for (std::size_t j = 0; j < g; ++j) {
      cost.at(i, j) = w.cls * cls + w.l1 * l1_ccwh(predictions[i], ground_truth[j]) +
                      w.giou * (1.0 - giou(pb, to_xyxy(ground_truth[j])));
    }
  }
  return cost;
}

double regression_loss(std::span<const BoxCCWH> predicted, std::span<const BoxCCWH> target,
                       const RegressionWeights& w) {
  if (predicted.size() != target.size()) throw std::invalid_argument("regression_loss: length mismatch");
  if (predicted.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    total += w.l1 * l1_ccwh(predicted[i], target[i]) +
             w.giou * (1.0 - giou(to_xyxy(predicted[i]), to_xyxy(target[i])));
  }
  return total / static_cast<double>(predicted.size());
}

double classification_loss(std::span<const double> logits, const MatchResult& match, double alpha,
                           double gamma) {
  std::vector<char> positive(logits.size(), 0);
  for (const auto& pr : match.pairs) positive.at(pr.first) = 1;
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) total += focal_element(logits[i], positive[i], alpha, gamma);
  return total / static_cast<double>(std::max<std::size_t>(1, match.pairs.size()));
}

LossBreakdown total_loss(double reg, double cls, double rt, double ctr, double lambda) {
  const std::pair<const char*, double> parts[] = {
      {"regression loss", reg}, {"classification loss", cls}, {"router loss", rt},
      {"centerness loss", ctr}, {"lambda", lambda}};
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) throw TrainingStepError(std::string("non-finite ") + name);
  }
  LossBreakdown out{reg, cls, rt, ctr, lambda, 0.0};
  out.total = reg + cls + rt + lambda * ctr;
  return out;
}

namespace {

struct Corners {
  Var x1, y1, x2, y2;
};

Corners corners(Var ccwh) {
  Var cx = ad::slice_cols(ccwh, 0, 1), cy = ad::slice_cols(ccwh, 1, 2);
  Var hw = ad::scale(ad::slice_cols(ccwh, 2, 3), 0.5), hh = ad::scale(ad::slice_cols(ccwh, 3, 4), 0.5);
  return {ad::sub(cx, hw), ad::sub(cy, hh), ad::add(cx, hw), ad::add(cy, hh)};
}

}  // namespace

Var giou_rows(Var predicted, Var target) {
  const Corners a = corners(predicted);
  const Corners b = corners(target);
  Var area_a = ad::mul(ad::sub(a.x2, a.x1), ad::sub(a.y2, a.y1));
  Var area_b = ad::mul(ad::sub(b.x2, b.x1), ad::sub(b.y2, b.y1));
  Var iw = ad::relu(ad::sub(ad::minimum(a.x2, b.x2), ad::maximum(a.x1, b.x1)));
  Var ih = ad::relu(ad::sub(ad::minimum(a.y2, b.y2), ad::maximum(a.y1, b.y1)));
  Var inter = ad::mul(iw, ih);
  Var uni = ad::sub(ad::add(area_a, area_b), inter);
  Var hull = ad::mul(ad::sub(ad::maximum(a.x2, b.x2), ad::minimum(a.x1, b.x1)),
                     ad::sub(ad::maximum(a.y2, b.y2), ad::minimum(a.y1, b.y1)));
  return ad::sub(ad::div(inter, uni), ad::div(ad::sub(hull, uni), hull));
}

Var regression_loss(Var boxes, std::span<const BoxCCWH> ground_truth, const MatchResult& match,
                    const RegressionWeights& w) {
  Graph& g = *boxes.graph;
  if (match.pairs.empty()) return g.constant(Tensor::scalar(0.0));
  std::vector<std::size_t> rows;
  Tensor target = Tensor::matrix(match.pairs.size(), 4);
  for (std::size_t k = 0; k < match.pairs.size(); ++k) {
    const auto [i, j] = match.pairs[k];
    rows.push_back(i);
    const BoxCCWH& t = ground_truth[j];
    target.at(k, 0) = t.cx;
    target.at(k, 1) = t.cy;
    target.at(k, 2) = t.w;
    target.at(k, 3) = t.h;
  }
  Var pred = ad::gather_rows(boxes, rows);
  Var tgt = g.constant(std::move(target));
  const double n = static_cast<double>(match.pairs.size());
  Var l1 = ad::scale(ad::sum(ad::abs(ad::sub(pred, tgt))), w.l1 / n);
  Var gi = ad::scale(ad::sum(ad::add_scalar(ad::scale(giou_rows(pred, tgt), -1.0), 1.0)), w.giou / n);
  return ad::add(l1, gi);
}

Var classification_loss(Var logits, const MatchResult& match, double alpha, double gamma) {
  Tensor targets = Tensor::matrix(logits.rows(), 1);
  for (const auto& pr : match.pairs) targets.at(pr.first, 0) = 1.0;
  const double norm = static_cast<double>(std::max<std::size_t>(1, match.pairs.size()));
  return ad::scale(ad::sum(ad::sigmoid_focal(logits, targets, alpha, gamma)), 1.0 / norm);
}

}  // namespace pfrpn
