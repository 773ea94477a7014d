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
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "pfrpn/geometry.hpp"
#include "pfrpn/image.hpp"

namespace pfrpn {

enum class ShapeKind { kRectangle, kEllipse, kTriangle };

struct SceneConfig {
  std::size_t canvas = 128;
  std::size_t objects_min = 1;
  std::size_t objects_max = 6;
  std::vector<ShapeKind> kinds = {ShapeKind::kRectangle, ShapeKind::kEllipse,
                                  ShapeKind::kTriangle};
  double size_min = 0.06;  // fraction of the canvas side
  double size_max = 0.45;
  double noise = 0.04;     // per-pixel uniform noise amplitude
  double max_overlap_iou = 0.7;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Geometric description of one rendered object, in pixel units. Rectangles
/// and ellipses use the extent [x0, x1] x [y0, y1]; triangles use the three
/// vertices.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::kRectangle;
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  std::array<Point, 3> vertices{};
  std::array<double, 3> color{};

  /// True when the pixel whose center is (px + 0.5, py + 0.5) belongs to the shape.
  bool covers(std::size_t px, std::size_t py) const;
};

struct Annotation {
  std::vector<BoxXYXY> boxes;
  bool operator==(const Annotation&) const = default;
};

struct Scene {
  std::string id;
  Image image;
  Annotation annotation;
  /// Shapes in paint order (back to front); empty for scenes read from disk.
  std::vector<ShapeSpec> shapes;
};

/// Canonical id for scene `index`, e.g. "000042".
std::string scene_id(std::size_t index);

/// Deterministic in (config, index). Pixel values are multiples of 1/255 and
/// box coordinates carry 6 decimals so that a dataset round-trips exactly.
Scene generate_scene(const SceneConfig& config, std::size_t index);

std::vector<Scene> generate_scenes(const SceneConfig& config, std::size_t first,
                                   std::size_t count);

/// One of the eight symmetries of the square canvas: bit 0 transposes, bit 1
/// mirrors x, bit 2 mirrors y (applied in that order). Pixels and boxes move
/// together; shapes are dropped.
Scene dihedral_transform(const Scene& scene, unsigned transform);

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layout: manifest.json, scenes/<id>.ppm, scenes/<id>.json.
void write_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& dir);
/// An empty or missing-manifest directory yields an empty dataset.
std::vector<Scene> read_dataset(const std::filesystem::path& dir);

/// FNV-1a 64-bit digest rendered as 16 hex digits.
std::string digest_hex(const std::string& bytes);

std::string annotation_json(const std::string& id, const Annotation& annotation,
                            std::size_t canvas);

}  // namespace pfrpn
