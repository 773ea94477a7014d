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
#include "pfrpn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace pfrpn {

double BoxXYXY::area() const {
  return std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1);
}

BoxCCWH to_ccwh(const BoxXYXY& b) {
  return {0.5 * (b.x1 + b.x2), 0.5 * (b.y1 + b.y2), b.x2 - b.x1, b.y2 - b.y1};
}

BoxXYXY to_xyxy(const BoxCCWH& b) {
  return {b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.cx + 0.5 * b.w, b.cy + 0.5 * b.h};
}

namespace {

double intersection(const BoxXYXY& a, const BoxXYXY& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return w > 0.0 && h > 0.0 ? w * h : 0.0;
}

}  // namespace

double iou(const BoxXYXY& a, const BoxXYXY& b) {
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double giou(const BoxXYXY& a, const BoxXYXY& b) {
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  const double hull = (std::max(a.x2, b.x2) - std::min(a.x1, b.x1)) *
                      (std::max(a.y2, b.y2) - std::min(a.y1, b.y1));
  if (hull <= 0.0) return 0.0;
  const double i = uni > 0.0 ? inter / uni : 0.0;
  return i - (hull - uni) / hull;
}

bool contains(const BoxXYXY& box, Point p) {
  return p.x >= box.x1 && p.x <= box.x2 && p.y >= box.y1 && p.y <= box.y2;
}

EdgeDistances edge_distances(Point p, const BoxXYXY& box) {
  return {p.x - box.x1, box.x2 - p.x, p.y - box.y1, box.y2 - p.y};
}

double centerness(const EdgeDistances& d) {
  const double lr_max = std::max(d.l, d.r);
  const double tb_max = std::max(d.t, d.b);
  if (lr_max <= 0.0 || tb_max <= 0.0) return 0.0;
  const double lr = std::max(0.0, std::min(d.l, d.r)) / lr_max;
  const double tb = std::max(0.0, std::min(d.t, d.b)) / tb_max;
  return std::sqrt(lr * tb);
}

double centerness_target(Point p, const BoxXYXY& box) {
  if (!contains(box, p)) return 0.0;
  return centerness(edge_distances(p, box));
}

SizeBucket size_bucket(const BoxXYXY& box) {
  const double a = box.area();
  if (a < kSmallAreaMax) return SizeBucket::kSmall;
  if (a < kMediumAreaMax) return SizeBucket::kMedium;
  return SizeBucket::kLarge;
}

std::array<double, 10> recall_iou_thresholds() {
  std::array<double, 10> t{};
  for (int i = 0; i < 10; ++i) t[i] = static_cast<double>(50 + 5 * i) / 100.0;
  return t;
}

namespace {

// Kuhn's augmenting-path matching; returns, per GT, the matched proposal or -1.
std::vector<int> max_matching(std::span<const BoxXYXY> proposals,
                              std::span<const BoxXYXY> ground_truth, double tau) {
  const std::size_t g = ground_truth.size();
  const std::size_t p = proposals.size();
  std::vector<std::vector<int>> adj(g);
  for (std::size_t i = 0; i < g; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      if (iou(ground_truth[i], proposals[j]) >= tau) adj[i].push_back(static_cast<int>(j));
    }
  }
  std::vector<int> owner(p, -1);
  std::vector<int> match(g, -1);
  std::vector<char> seen;
  std::function<bool(int)> augment = [&](int gi) {
    for (int pj : adj[gi]) {
      if (seen[pj]) continue;
      seen[pj] = 1;
      if (owner[pj] < 0 || augment(owner[pj])) {
        owner[pj] = gi;
        match[gi] = pj;
        return true;
      }
    }
    return false;
  };
  for (std::size_t i = 0; i < g; ++i) {
    seen.assign(p, 0);
    augment(static_cast<int>(i));
  }
  return match;
}

void check_inputs(std::span<const std::vector<BoxXYXY>> proposals,
                  std::span<const std::vector<BoxXYXY>> ground_truth, std::size_t k) {
  if (proposals.size() != ground_truth.size()) {
    throw std::invalid_argument("average_recall: proposal/ground-truth image count mismatch");
  }
  if (k < 1) throw std::invalid_argument("average_recall: K must be >= 1");
}

}  // namespace

std::size_t count_matched(std::span<const BoxXYXY> proposals,
                          std::span<const BoxXYXY> ground_truth, double tau) {
  const auto m = max_matching(proposals, ground_truth, tau);
  return static_cast<std::size_t>(std::count_if(m.begin(), m.end(), [](int v) { return v >= 0; }));
}

double recall_at(std::span<const std::vector<BoxXYXY>> proposals,
                 std::span<const std::vector<BoxXYXY>> ground_truth, std::size_t k,
                 double tau) {
  check_inputs(proposals, ground_truth, k);
  std::size_t matched = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    const auto top = std::span(proposals[i]).first(std::min(k, proposals[i].size()));
    matched += count_matched(top, ground_truth[i], tau);
    total += ground_truth[i].size();
  }
  return total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
}

AverageRecall average_recall(std::span<const std::vector<BoxXYXY>> proposals,
                             std::span<const std::vector<BoxXYXY>> ground_truth,
                             std::size_t k) {
  check_inputs(proposals, ground_truth, k);
  const auto thresholds = recall_iou_thresholds();
  // [bucket][0 = all, 1..3 = small/medium/large]
  std::array<std::size_t, 4> total{};
  std::array<double, 4> recall_sum{};
  for (std::size_t i = 0; i < ground_truth.size(); ++i) {
    total[0] += ground_truth[i].size();
    for (const auto& b : ground_truth[i]) total[1 + static_cast<int>(size_bucket(b))] += 1;
  }
  for (double tau : thresholds) {
    std::array<std::size_t, 4> matched{};
    for (std::size_t i = 0; i < proposals.size(); ++i) {
      if (ground_truth[i].empty()) continue;
      const auto top = std::span(proposals[i]).first(std::min(k, proposals[i].size()));
      const auto m = max_matching(top, ground_truth[i], tau);
      for (std::size_t g = 0; g < m.size(); ++g) {
        if (m[g] < 0) continue;
        matched[0] += 1;
        matched[1 + static_cast<int>(size_bucket(ground_truth[i][g]))] += 1;
      }
    }
    for (int b = 0; b < 4; ++b) {
      if (total[b] > 0) recall_sum[b] += static_cast<double>(matched[b]) / static_cast<double>(total[b]);
    }
  }
  const double n = static_cast<double>(thresholds.size());
  AverageRecall out;
  out.num_gt = total[0];
  out.ar = total[0] > 0 ? recall_sum[0] / n : 0.0;
  out.ar_small = total[1] > 0 ? recall_sum[1] / n : -1.0;
  out.ar_medium = total[2] > 0 ? recall_sum[2] / n : -1.0;
  out.ar_large = total[3] > 0 ? recall_sum[3] / n : -1.0;
  return out;
}

}  // namespace pfrpn
