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
#include "pfrpn/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pfrpn/rng.hpp"

namespace pfrpn {

using nlohmann::json;

void SceneConfig::validate() const {
  if (canvas < 8) throw std::invalid_argument("scene config: canvas must be >= 8");
  if (objects_min < 1) throw std::invalid_argument("scene config: objects_min must be >= 1");
  if (objects_max < objects_min) {
    throw std::invalid_argument("scene config: objects_max must be >= objects_min");
  }
  if (!(size_min > 0.0 && size_min <= size_max && size_max < 1.0)) {
    throw std::invalid_argument("scene config: size range must satisfy 0 < size_min <= size_max < 1");
  }
  if (kinds.empty()) throw std::invalid_argument("scene config: shape kinds must be non-empty");
  if (!(noise >= 0.0 && noise < 0.5)) throw std::invalid_argument("scene config: noise must be in [0, 0.5)");
  if (!(max_overlap_iou > 0.0 && max_overlap_iou <= 1.0)) {
    throw std::invalid_argument("scene config: max_overlap_iou must be in (0, 1]");
  }
}

namespace {

double edge_sign(Point a, Point b, Point p) {
  return (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

double quantize(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

double color_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  double s = 0.0;
  for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

ShapeSpec sample_shape(const SceneConfig& cfg, Rng& rng) {
  const double n = static_cast<double>(cfg.canvas);
  ShapeSpec s;
  s.kind = cfg.kinds[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(cfg.kinds.size()) - 1))];
  const double w = rng.uniform(cfg.size_min, cfg.size_max) * n;
  const double h = rng.uniform(cfg.size_min, cfg.size_max) * n;
  s.x0 = rng.uniform(0.0, n - w);
  s.y0 = rng.uniform(0.0, n - h);
  s.x1 = s.x0 + w;
  s.y1 = s.y0 + h;
  if (s.kind == ShapeKind::kTriangle) {
    const double apex = rng.uniform(s.x0, s.x1);
    if (rng.uniform() < 0.5) {
      s.vertices = {Point{apex, s.y0}, Point{s.x0, s.y1}, Point{s.x1, s.y1}};
    } else {
      s.vertices = {Point{apex, s.y1}, Point{s.x0, s.y0}, Point{s.x1, s.y0}};
    }
  }
  return s;
}

}  // namespace

bool ShapeSpec::covers(std::size_t px, std::size_t py) const {
  const Point p{static_cast<double>(px) + 0.5, static_cast<double>(py) + 0.5};
  switch (kind) {
    case ShapeKind::kRectangle:
      return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1;
    case ShapeKind::kEllipse: {
      const double rx = 0.5 * (x1 - x0);
      const double ry = 0.5 * (y1 - y0);
      if (rx <= 0.0 || ry <= 0.0) return false;
      const double dx = (p.x - 0.5 * (x0 + x1)) / rx;
      const double dy = (p.y - 0.5 * (y0 + y1)) / ry;
      return dx * dx + dy * dy <= 1.0;
    }
    case ShapeKind::kTriangle: {
      const double d1 = edge_sign(vertices[0], vertices[1], p);
      const double d2 = edge_sign(vertices[1], vertices[2], p);
      const double d3 = edge_sign(vertices[2], vertices[0], p);
      const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
      const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
      return !(neg && pos);
    }
  }
  return false;
}

std::string scene_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu", index);
  return buf;
}

Scene generate_scene(const SceneConfig& config, std::size_t index) {
  config.validate();
  Rng rng(config.seed, index);
  const std::size_t n = config.canvas;
  Scene scene;
  scene.id = scene_id(index);

  std::array<double, 3> background{};
  for (double& c : background) c = rng.uniform(0.1, 0.9);

  const auto target = static_cast<std::size_t>(
      rng.integer(static_cast<std::int64_t>(config.objects_min),
                  static_cast<std::int64_t>(config.objects_max)));
  std::vector<std::vector<char>> masks;
  for (std::size_t obj = 0; obj < target; ++obj) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      ShapeSpec s = sample_shape(config, rng);
      std::vector<char> mask(n * n, 0);
      std::size_t minx = n, miny = n, maxx = 0, maxy = 0;
      for (std::size_t y = 0; y < n; ++y) {
        for (std::size_t x = 0; x < n; ++x) {
          if (!s.covers(x, y)) continue;
          mask[y * n + x] = 1;
          minx = std::min(minx, x);
          miny = std::min(miny, y);
          maxx = std::max(maxx, x);
          maxy = std::max(maxy, y);
        }
      }
      if (minx > maxx) continue;
      const double inv = 1.0 / static_cast<double>(n);
      BoxXYXY box{round6(static_cast<double>(minx) * inv), round6(static_cast<double>(miny) * inv),
                  round6(static_cast<double>(maxx + 1) * inv),
                  round6(static_cast<double>(maxy + 1) * inv)};
      const bool crowded = std::any_of(
          scene.annotation.boxes.begin(), scene.annotation.boxes.end(),
          [&](const BoxXYXY& other) { return iou(box, other) > config.max_overlap_iou; });
      if (crowded) continue;

      for (int tries = 0; tries < 64; ++tries) {
        for (double& c : s.color) c = rng.uniform(0.0, 1.0);
        bool ok = color_distance(s.color, background) >= 0.35;
        for (const auto& prev : scene.shapes) ok = ok && color_distance(s.color, prev.color) >= 0.2;
        if (ok) break;
      }
      if (color_distance(s.color, background) < 0.35) {
        for (int c = 0; c < 3; ++c) s.color[c] = background[c] < 0.5 ? 1.0 : 0.0;
      }
      scene.shapes.push_back(s);
      scene.annotation.boxes.push_back(box);
      masks.push_back(std::move(mask));
      placed = true;
    }
  }

  scene.image = Image(n, n, 3);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      std::array<double, 3> c = background;
      for (std::size_t s = 0; s < scene.shapes.size(); ++s) {
        if (masks[s][y * n + x]) c = scene.shapes[s].color;
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        scene.image.at(x, y, ch) = quantize(c[ch] + rng.uniform(-config.noise, config.noise));
      }
    }
  }
  return scene;
}

Scene dihedral_transform(const Scene& scene, unsigned transform) {
  if (transform > 7) throw std::invalid_argument("dihedral_transform: transform must be in [0, 7]");
  const Image& in = scene.image;
  if (in.width != in.height) throw std::invalid_argument("dihedral_transform: image must be square");
  const bool transpose = transform & 1u, mirror_x = transform & 2u, mirror_y = transform & 4u;
  const std::size_t n = in.width;
  Scene out;
  out.id = scene.id;
  out.image = Image(n, n, in.channels);
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      std::size_t a = transpose ? y : x, b = transpose ? x : y;
      if (mirror_x) a = n - 1 - a;
      if (mirror_y) b = n - 1 - b;
      for (std::size_t c = 0; c < in.channels; ++c) out.image.at(a, b, c) = in.at(x, y, c);
    }
  }
  for (BoxXYXY b : scene.annotation.boxes) {
    if (transpose) b = {b.y1, b.x1, b.y2, b.x2};
    if (mirror_x) b = {1.0 - b.x2, b.y1, 1.0 - b.x1, b.y2};
    if (mirror_y) b = {b.x1, 1.0 - b.y2, b.x2, 1.0 - b.y1};
    out.annotation.boxes.push_back(b);
  }
  return out;
}

std::vector<Scene> generate_scenes(const SceneConfig& config, std::size_t first,
                                   std::size_t count) {
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(config, first + i));
  return out;
}

std::string digest_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string annotation_json(const std::string& id, const Annotation& annotation,
                            std::size_t canvas) {
  json boxes = json::array();
  for (const auto& b : annotation.boxes) {
    boxes.push_back({round6(b.x1), round6(b.y1), round6(b.x2), round6(b.y2)});
  }
  json doc = {{"scene", id}, {"canvas", canvas}, {"boxes", boxes}};
  return doc.dump() + "\n";
}

namespace {

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

void write_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "scenes");
  json manifest = {{"version", 1}, {"scenes", json::array()}};
  for (const auto& scene : scenes) {
    const std::string ann = annotation_json(scene.id, scene.annotation, scene.image.width);
    write_pnm(scene.image, dir / "scenes" / (scene.id + ".ppm"));
    std::ofstream out(dir / "scenes" / (scene.id + ".json"), std::ios::binary);
    out << ann;
    if (!out) throw DatasetError("scene " + scene.id + ": failed to write annotation");
    manifest["scenes"].push_back({{"id", scene.id},
                                  {"image", "scenes/" + scene.id + ".ppm"},
                                  {"annotation", "scenes/" + scene.id + ".json"},
                                  {"digest", digest_hex(ann)}});
  }
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << "\n";
  if (!out) throw DatasetError("failed to write manifest in " + dir.string());
}

std::vector<Scene> read_dataset(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::vector<Scene> scenes;
  if (!fs::exists(dir / "manifest.json")) {
    if (fs::exists(dir) && fs::is_directory(dir) && fs::is_empty(dir)) return scenes;
    if (!fs::exists(dir)) throw DatasetError("dataset directory does not exist: " + dir.string());
    return scenes;
  }
  json manifest;
  try {
    manifest = json::parse(slurp(dir / "manifest.json"));
  } catch (const json::exception& e) {
    throw DatasetError(std::string("corrupt manifest: ") + e.what());
  }
  if (!manifest.contains("scenes") || !manifest["scenes"].is_array()) {
    throw DatasetError("corrupt manifest: missing scenes list");
  }
  for (const auto& entry : manifest["scenes"]) {
    std::string id = entry.value("id", std::string("<unknown>"));
    try {
      Scene scene;
      scene.id = id;
      const std::string ann_text = slurp(dir / entry.at("annotation").get<std::string>());
      if (entry.contains("digest") && entry["digest"].get<std::string>() != digest_hex(ann_text)) {
        throw DatasetError("annotation digest mismatch");
      }
      const json ann = json::parse(ann_text);
      for (const auto& b : ann.at("boxes")) {
        scene.annotation.boxes.push_back(
            {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()});
      }
      scene.image = read_pnm(dir / entry.at("image").get<std::string>());
      scenes.push_back(std::move(scene));
    } catch (const std::exception& e) {
      throw DatasetError("scene " + id + ": " + e.what());
    }
  }
  return scenes;
}

}  // namespace pfrpn
