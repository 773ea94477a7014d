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

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace pfrpn {

/// Corner-encoded box in normalized image coordinates.
struct BoxXYXY {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const;
  bool valid() const { return x1 <= x2 && y1 <= y2; }
  bool operator==(const BoxXYXY&) const = default;
};

/// Center/size-encoded box.
struct BoxCCWH {
  double cx = 0.0, cy = 0.0, w = 0.0, h = 0.0;
  bool operator==(const BoxCCWH&) const = default;
};

struct Point {
  double x = 0.0, y = 0.0;
};

/// Distances from a point to the left, right, top and bottom box edges.
struct EdgeDistances {
  double l = 0.0, r = 0.0, t = 0.0, b = 0.0;
};

BoxCCWH to_ccwh(const BoxXYXY& b);
BoxXYXY to_xyxy(const BoxCCWH& b);

/// Intersection over union. Zero-area boxes give 0.
double iou(const BoxXYXY& a, const BoxXYXY& b);

/// Generalized IoU. Two degenerate boxes give 0.
double giou(const BoxXYXY& a, const BoxXYXY& b);

bool contains(const BoxXYXY& box, Point p);

EdgeDistances edge_distances(Point p, const BoxXYXY& box);

/// sqrt(min(l,r)/max(l,r) * min(t,b)/max(t,b)); 0 when a ratio is undefined.
double centerness(const EdgeDistances& d);

/// Centerness of `p` w.r.t. `box`; 0 for points outside the box (strictly
/// outside) and for zero-width or zero-height boxes.
double centerness_target(Point p, const BoxXYXY& box);

/// Normalized-area thresholds separating small/medium/large objects.
inline constexpr double kSmallAreaMax = (1.0 / 16.0) * (1.0 / 16.0);
inline constexpr double kMediumAreaMax = (1.0 / 4.0) * (1.0 / 4.0);

enum class SizeBucket { kSmall, kMedium, kLarge };
SizeBucket size_bucket(const BoxXYXY& box);

/// IoU thresholds 0.50, 0.55, ..., 0.95.
std::array<double, 10> recall_iou_thresholds();

/// Maximum number of ground-truth boxes that can be matched one-to-one to
/// proposals with IoU >= tau (bipartite maximum matching).
std::size_t count_matched(std::span<const BoxXYXY> proposals,
                          std::span<const BoxXYXY> ground_truth, double tau);

struct AverageRecall {
  double ar = 0.0;
  /// Bucket recalls are -1 when no ground truth falls into the bucket.
  double ar_small = -1.0;
  double ar_medium = -1.0;
  double ar_large = -1.0;
  std::size_t num_gt = 0;
};

/// AR@K: for each threshold, recall = matched GT / total GT pooled over images
/// using the top-K proposals of each image; AR is the mean over thresholds.
/// `proposals[i]` must be ranked by score, best first.
AverageRecall average_recall(std::span<const std::vector<BoxXYXY>> proposals,
                             std::span<const std::vector<BoxXYXY>> ground_truth,
                             std::size_t k);

/// Recall at a single threshold with the same pooling as average_recall.
double recall_at(std::span<const std::vector<BoxXYXY>> proposals,
                 std::span<const std::vector<BoxXYXY>> ground_truth, std::size_t k,
                 double tau);

}  // namespace pfrpn
