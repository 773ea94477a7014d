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
#include "pfrpn/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pfrpn/checkpoint.hpp"
#include "pfrpn/image.hpp"

namespace pfrpn::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void type_error(const std::string& key, const char* expected) {
  throw ConfigError("config key '" + key + "': expected " + expected);
}

std::size_t as_size(const std::string& key, const json& v) {
  if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
    type_error(key, "a non-negative integer");
  }
  return v.get<std::size_t>();
}

double as_double(const std::string& key, const json& v) {
  if (!v.is_number()) type_error(key, "a number");
  return v.get<double>();
}

bool as_bool(const std::string& key, const json& v) {
  if (!v.is_boolean()) type_error(key, "true or false");
  return v.get<bool>();
}

std::string as_string(const std::string& key, const json& v) {
  if (!v.is_string()) type_error(key, "a string");
  return v.get<std::string>();
}

template <typename T, typename Read>
std::vector<T> as_list(const std::string& key, const json& v, Read read) {
  if (!v.is_array()) type_error(key, "an array");
  std::vector<T> out;
  for (const json& e : v) out.push_back(read(key, e));
  return out;
}

const std::map<std::string, ShapeKind>& kind_names() {
  static const std::map<std::string, ShapeKind> names = {
      {"rectangle", ShapeKind::kRectangle}, {"ellipse", ShapeKind::kEllipse}, {"triangle", ShapeKind::kTriangle}};
  return names;
}

std::string kind_name(ShapeKind k) {
  for (const auto& [name, kind] : kind_names()) {
    if (kind == k) return name;
  }
  return "rectangle";
}

struct Field {
  std::string key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename Member>
Field size_field(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return json(member(c)); },
          [member, key](RunConfig& c, const json& v) { member(c) = as_size(key, v); }};
}

template <typename Member>
Field double_field(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return json(member(c)); },
          [member, key](RunConfig& c, const json& v) { member(c) = as_double(key, v); }};
}

template <typename Member>
Field bool_field(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return json(member(c)); },
          [member, key](RunConfig& c, const json& v) { member(c) = as_bool(key, v); }};
}

template <typename Member>
Field string_field(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return json(member(c)); },
          [member, key](RunConfig& c, const json& v) { member(c) = as_string(key, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back({"seed", [](const RunConfig& c) { return json(c.train.seed); },
                 [](RunConfig& c, const json& v) { c.train.seed = as_size("seed", v); }});
    f.push_back({"data_seed", [](const RunConfig& c) { return json(c.scene.seed); },
                 [](RunConfig& c, const json& v) { c.scene.seed = as_size("data_seed", v); }});
    f.push_back({"canvas", [](const RunConfig& c) { return json(c.model.canvas); },
                 [](RunConfig& c, const json& v) { c.model.canvas = c.scene.canvas = as_size("canvas", v); }});
    f.push_back(size_field("objects_min", [](auto& c) -> auto& { return c.scene.objects_min; }));
    f.push_back(size_field("objects_max", [](auto& c) -> auto& { return c.scene.objects_max; }));
    f.push_back(double_field("size_min", [](auto& c) -> auto& { return c.scene.size_min; }));
    f.push_back(double_field("size_max", [](auto& c) -> auto& { return c.scene.size_max; }));
    f.push_back(double_field("noise", [](auto& c) -> auto& { return c.scene.noise; }));
    f.push_back(double_field("max_overlap_iou", [](auto& c) -> auto& { return c.scene.max_overlap_iou; }));
    f.push_back({"shapes",
                 [](const RunConfig& c) {
                   json a = json::array();
                   for (ShapeKind k : c.scene.kinds) a.push_back(kind_name(k));
                   return a;
                 },
                 [](RunConfig& c, const json& v) {
                   c.scene.kinds = as_list<ShapeKind>("shapes", v, [](const std::string& key, const json& e) {
                     const std::string name = as_string(key, e);
                     const auto it = kind_names().find(name);
                     if (it == kind_names().end()) {
                       throw ConfigError("config key 'shapes': unknown shape '" + name + "'");
                     }
                     return it->second;
                   });
                 }});
    f.push_back(size_field("train_scenes", [](auto& c) -> auto& { return c.train_scenes; }));
    f.push_back(size_field("eval_scenes", [](auto& c) -> auto& { return c.eval_scenes; }));
    f.push_back({"budgets", [](const RunConfig& c) { return json(c.budgets); },
                 [](RunConfig& c, const json& v) { c.budgets = as_list<std::size_t>("budgets", v, as_size); }});
    f.push_back(size_field("channels", [](auto& c) -> auto& { return c.model.channels; }));
    f.push_back({"backbone_channels", [](const RunConfig& c) { return json(c.model.backbone_channels); },
                 [](RunConfig& c, const json& v) {
                   const auto list = as_list<std::size_t>("backbone_channels", v, as_size);
                   if (list.size() != c.model.backbone_channels.size()) {
                     throw ConfigError("config key 'backbone_channels': expected 4 entries");
                   }
                   std::copy(list.begin(), list.end(), c.model.backbone_channels.begin());
                 }});
    f.push_back(size_field("decoder_layers", [](auto& c) -> auto& { return c.model.decoder_layers; }));
    f.push_back(size_field("ffn_hidden", [](auto& c) -> auto& { return c.model.ffn_hidden; }));
    f.push_back(size_field("queries", [](auto& c) -> auto& { return c.model.queries; }));
    f.push_back(size_field("k", [](auto& c) -> auto& { return c.model.k; }));
    f.push_back(double_field("delta", [](auto& c) -> auto& { return c.model.csp.delta; }));
    f.push_back(size_field("iterations", [](auto& c) -> auto& { return c.model.csp.iterations; }));
    f.push_back({"level_order", [](const RunConfig& c) { return json(c.model.csp.level_order); },
                 [](RunConfig& c, const json& v) {
                   c.model.csp.level_order = as_list<int>("level_order", v, [](const std::string& key, const json& e) {
                     return static_cast<int>(as_size(key, e));
                   });
                 }});
    f.push_back(bool_field("use_sia", [](auto& c) -> auto& { return c.model.use_sia; }));
    f.push_back(bool_field("use_csp", [](auto& c) -> auto& { return c.model.use_csp; }));
    f.push_back(bool_field("use_cgqs", [](auto& c) -> auto& { return c.model.use_cgqs; }));
    f.push_back(bool_field("rank_with_center", [](auto& c) -> auto& { return c.model.rank_with_center; }));
    f.push_back(double_field("anchor_scale", [](auto& c) -> auto& { return c.model.anchor_scale; }));
    f.push_back(size_field("epochs", [](auto& c) -> auto& { return c.train.epochs; }));
    f.push_back(size_field("batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
    f.push_back(double_field("learning_rate", [](auto& c) -> auto& { return c.train.learning_rate; }));
    f.push_back(double_field("momentum", [](auto& c) -> auto& { return c.train.momentum; }));
    f.push_back(string_field("optimizer", [](auto& c) -> auto& { return c.train.optimizer; }));
    f.push_back(double_field("grad_clip", [](auto& c) -> auto& { return c.train.grad_clip; }));
    f.push_back(size_field("lr_drop_epoch", [](auto& c) -> auto& { return c.train.lr_drop_epoch; }));
    f.push_back(double_field("lambda", [](auto& c) -> auto& { return c.train.lambda; }));
    f.push_back({"focal_alpha", [](const RunConfig& c) { return json(c.train.focal_alpha); },
                 [](RunConfig& c, const json& v) { c.train.focal_alpha = c.train.match.alpha = as_double("focal_alpha", v); }});
    f.push_back({"focal_gamma", [](const RunConfig& c) { return json(c.train.focal_gamma); },
                 [](RunConfig& c, const json& v) { c.train.focal_gamma = c.train.match.gamma = as_double("focal_gamma", v); }});
    f.push_back(double_field("token_loss_weight", [](auto& c) -> auto& { return c.train.token_loss_weight; }));
    f.push_back(double_field("match_cls", [](auto& c) -> auto& { return c.train.match.cls; }));
    f.push_back(double_field("match_l1", [](auto& c) -> auto& { return c.train.match.l1; }));
    f.push_back(double_field("match_giou", [](auto& c) -> auto& { return c.train.match.giou; }));
    f.push_back(double_field("reg_l1", [](auto& c) -> auto& { return c.train.regression.l1; }));
    f.push_back(double_field("reg_giou", [](auto& c) -> auto& { return c.train.regression.giou; }));
    f.push_back(bool_field("augment", [](auto& c) -> auto& { return c.train.augment; }));
    f.push_back(string_field("data_dir", [](auto& c) -> auto& { return c.data_dir; }));
    f.push_back(string_field("checkpoint", [](auto& c) -> auto& { return c.checkpoint; }));
    f.push_back(string_field("out_dir", [](auto& c) -> auto& { return c.out_dir; }));
    return f;
  }();
  return all;
}

const Field& find_field(const std::string& key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

json config_object(const RunConfig& config) {
  json o = json::object();
  for (const Field& f : fields()) o[f.key] = f.get(config);
  return o;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

json box_json(const BoxXYXY& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

json recall_json(const EvalReport& r) {
  json rows = json::array();
  for (std::size_t i = 0; i < r.budgets.size(); ++i) {
    const AverageRecall& a = r.recall[i];
    rows.push_back({{"k", r.budgets[i]},
                    {"ar", a.ar},
                    {"ar_small", a.ar_small},
                    {"ar_medium", a.ar_medium},
                    {"ar_large", a.ar_large},
                    {"num_gt", a.num_gt}});
  }
  return {{"images", r.images}, {"recall", rows}};
}

json loss_json(const LossBreakdown& l) {
  return {{"reg", l.reg}, {"cls", l.cls}, {"rt", l.rt}, {"ctr", l.ctr}, {"lambda", l.lambda}, {"total", l.total}};
}

std::string format_number(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

std::string recall_table(const EvalReport& r) {
  std::ostringstream os;
  os << "K\tAR\tAR_s\tAR_m\tAR_l\n";
  for (std::size_t i = 0; i < r.budgets.size(); ++i) {
    const AverageRecall& a = r.recall[i];
    os << r.budgets[i] << '\t' << format_number(a.ar) << '\t' << format_number(a.ar_small) << '\t'
       << format_number(a.ar_medium) << '\t' << format_number(a.ar_large) << '\n';
  }
  return os.str();
}

Model make_model(const RunConfig& config) {
  if (config.checkpoint.empty()) return Model(config.model, config.train.seed);
  return Model(config.model, load_checkpoint(config.checkpoint, config.model));
}

std::vector<Scene> dataset_split(const RunConfig& config, const char* split, std::size_t first,
                                 std::size_t count) {
  if (config.data_dir.empty()) return generate_scenes(config.scene, first, count);
  const fs::path dir = fs::path(config.data_dir) / split;
  std::vector<Scene> scenes = read_dataset(dir);
  if (scenes.empty()) throw DatasetError("dataset " + dir.string() + " is empty or missing");
  return scenes;
}

const Scene& find_scene(const std::vector<Scene>& scenes, const std::string& id) {
  if (id.empty()) return scenes.front();
  for (const Scene& s : scenes) {
    if (s.id == id) return s;
  }
  throw ConfigError("scene '" + id + "' not found in the evaluation split");
}

std::string timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void paint_box(Image& img, const BoxXYXY& b, const std::array<double, 3>& color) {
  const auto to_px = [&](double v, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(v * static_cast<double>(n), 0.0, static_cast<double>(n - 1)));
  };
  const std::size_t x1 = to_px(b.x1, img.width), x2 = to_px(b.x2, img.width);
  const std::size_t y1 = to_px(b.y1, img.height), y2 = to_px(b.y2, img.height);
  for (std::size_t x = x1; x <= x2; ++x) {
    for (std::size_t c = 0; c < 3; ++c) img.at(x, y1, c) = img.at(x, y2, c) = color[c];
  }
  for (std::size_t y = y1; y <= y2; ++y) {
    for (std::size_t c = 0; c < 3; ++c) img.at(x1, y, c) = img.at(x2, y, c) = color[c];
  }
}

// Selected query cells tinted red by combined score over a dimmed scene, with
// the top-ranked proposals outlined in green.
Image query_overlay(const Scene& scene, const ForwardResult& fr, const TokenLayout& layout,
                    std::size_t top) {
  Image img = scene.image;
  for (double& v : img.pixels) v *= 0.5;
  double best = 0.0;
  for (const QueryToken& q : fr.queries) best = std::max(best, q.combined);
  for (const QueryToken& q : fr.queries) {
    const std::size_t l = static_cast<std::size_t>(q.level - 1);
    const double half = 0.5 * static_cast<double>(layout.stride[l]) / static_cast<double>(img.width);
    const double strength = best > 0.0 ? q.combined / best : 1.0;
    const BoxXYXY cell{q.position.x - half, q.position.y - half, q.position.x + half, q.position.y + half};
    const auto px = [&](double v, std::size_t n) {
      return static_cast<std::size_t>(std::clamp(v * static_cast<double>(n), 0.0, static_cast<double>(n)));
    };
    for (std::size_t y = px(cell.y1, img.height); y < px(cell.y2, img.height); ++y) {
      for (std::size_t x = px(cell.x1, img.width); x < px(cell.x2, img.width); ++x) {
        img.at(x, y, 0) = std::max(img.at(x, y, 0), 0.5 + 0.5 * strength);
      }
    }
  }
  for (std::size_t i = 0; i < std::min(top, fr.proposals.size()); ++i) {
    paint_box(img, fr.proposals[i].box, {0.0, 1.0, 0.0});
  }
  for (double& v : img.pixels) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return img;
}

json proposals_json(const Scene& scene, const ForwardResult& fr) {
  json props = json::array();
  for (const Proposal& p : fr.proposals) props.push_back({{"box", box_json(p.box)}, {"score", p.score}});
  return {{"scene", scene.id}, {"proposals", props}};
}

struct Trained {
  Model model;
  std::vector<EpochLog> log;
};

Trained train_model(const RunConfig& config, std::span<const Scene> scenes, const TrainOptions& options) {
  Model model(config.model, config.train.seed);
  auto log = train(model, scenes, config.train, options);
  return {std::move(model), std::move(log)};
}

// ---- subcommands ----

int cmd_gen_data(const RunConfig& config, std::ostream& out) {
  const fs::path root(config.out_dir);
  const auto train_set = generate_scenes(config.scene, 0, config.train_scenes);
  const auto eval_set = generate_scenes(config.scene, config.train_scenes, config.eval_scenes);
  write_dataset(train_set, root / "train");
  write_dataset(eval_set, root / "eval");
  write_text(root / "config.json", config_json(config));
  out << "wrote " << train_set.size() << " training and " << eval_set.size() << " evaluation scenes to "
      << root.string() << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& config, std::ostream& out) {
  const fs::path root(config.out_dir);
  fs::create_directories(root);
  const auto scenes = training_scenes(config);
  std::ofstream log_file(root / "train.log", std::ios::app);
  log_file << timestamp() << " start: " << scenes.size() << " scenes, " << config.train.epochs << " epochs\n";
  TrainOptions options;
  options.checkpoint_dir = root / "checkpoints";
  options.on_epoch = [&](const EpochLog& e) {
    out << "epoch " << e.epoch << " total " << format_number(e.mean.total) << " reg " << format_number(e.mean.reg)
        << " cls " << format_number(e.mean.cls) << " rt " << format_number(e.mean.rt) << " ctr "
        << format_number(e.mean.ctr) << "\n";
    log_file << timestamp() << " epoch " << e.epoch << " total " << e.mean.total << std::endl;
  };
  const Trained t = train_model(config, scenes, options);
  save_checkpoint(t.model.params(), root / "model.pfrp");
  json epochs = json::array();
  for (const EpochLog& e : t.log) {
    json row = loss_json(e.mean);
    row["epoch"] = e.epoch;
    epochs.push_back(row);
  }
  write_text(root / "losses.json", json{{"epochs", epochs}}.dump(2) + "\n");
  write_text(root / "config.json", config_json(config));
  log_file << timestamp() << " done\n";
  out << "model written to " << (root / "model.pfrp").string() << "\n";
  return kExitOk;
}

int cmd_eval(const RunConfig& config, std::ostream& out) {
  const Model model = make_model(config);
  const auto scenes = evaluation_scenes(config);
  const EvalReport report = evaluate(model, scenes, config.budgets);
  write_text(fs::path(config.out_dir) / "metrics.json", recall_json(report).dump(2) + "\n");
  out << recall_table(report);
  return kExitOk;
}

int cmd_propose(const RunConfig& config, const std::string& scene_id, std::ostream& out) {
  const Model model = make_model(config);
  const auto scenes = evaluation_scenes(config);
  const Scene& scene = find_scene(scenes, scene_id);
  const ForwardResult fr = forward(model, scene.image);
  const std::string text = proposals_json(scene, fr).dump(2) + "\n";
  write_text(fs::path(config.out_dir) / ("proposals_" + scene.id + ".json"), text);
  out << text;
  return kExitOk;
}

int cmd_heatmap(const RunConfig& config, const std::string& scene_id, std::ostream& out) {
  const Model model = make_model(config);
  const auto scenes = evaluation_scenes(config);
  const Scene& scene = find_scene(scenes, scene_id);
  const ForwardResult fr = forward(model, scene.image);
  const fs::path dir(config.out_dir);
  const std::string prefix = scene.id + "_";
  fs::create_directories(dir);

  // Similarity maps use the embedding after the adapter, which is what the
  // cascade starts from.
  Tensor sia_state = fr.masks.empty() ? fr.refined : Tensor::matrix(1, fr.refined.size(), fr.masks.front().state);
  write_similarity_heatmaps(sia_state, fr.levels, dir, prefix + "sia_");
  write_mask_overlays(fr.masks, dir, prefix + "csp_");
  write_pnm(query_overlay(scene, fr, model.layout(), 10), dir / (prefix + "queries.ppm"));

  json sims = json::object();
  for (const LevelFeatures& lf : fr.levels) {
    sims["level" + std::to_string(lf.level)] = {{"height", lf.height}, {"width", lf.width},
                                                {"values", similarity_map(sia_state.values(), lf)}};
  }
  json masks = json::array();
  for (const MaskEntry& m : fr.masks) {
    masks.push_back({{"iteration", m.iteration}, {"level", m.level}, {"height", m.height}, {"width", m.width},
                     {"activated", m.activated}, {"mask", m.mask}});
  }
  json queries = json::array();
  for (const QueryToken& q : fr.queries) {
    queries.push_back({{"index", q.index}, {"level", q.level}, {"x", q.position.x}, {"y", q.position.y},
                       {"cls_score", q.cls_score}, {"center_score", q.center_score}, {"combined", q.combined}});
  }
  json sidecar = {{"scene", scene.id},
                  {"router", {{"raw_weights", fr.routing.raw_weights},
                              {"selected", fr.routing.selected},
                              {"normalized", fr.routing.normalized}}},
                  {"similarity", sims},
                  {"csp_masks", masks},
                  {"queries", queries},
                  {"proposals", proposals_json(scene, fr)["proposals"]}};
  write_text(dir / (prefix + "heatmap.json"), sidecar.dump(2) + "\n");
  out << "heatmaps for scene " << scene.id << " written to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_ablate(const RunConfig& config, const std::string& axis, std::ostream& out) {
  const auto values = ablation_values(axis);
  const auto train_set = training_scenes(config);
  const auto eval_set = evaluation_scenes(config);
  json rows = json::array();
  std::ostringstream table;
  table << axis;
  for (std::size_t k : config.budgets) table << "\tAR@" << k;
  table << "\tfinal_loss\n";
  for (const std::string& value : values) {
    const RunConfig variant = ablation_variant(config, axis, value);
    const Trained t = train_model(variant, train_set, {});
    const EvalReport report = evaluate(t.model, eval_set, variant.budgets);
    rows.push_back({{"value", value},
                    {"config", config_object(variant)},
                    {"metrics", recall_json(report)},
                    {"final_loss", loss_json(t.log.back().mean)}});
    table << value;
    for (const AverageRecall& a : report.recall) table << '\t' << format_number(a.ar);
    table << '\t' << format_number(t.log.back().mean.total) << '\n';
  }
  const fs::path dir(config.out_dir);
  write_text(dir / ("ablate_" + axis + ".json"), json{{"axis", axis}, {"rows", rows}}.dump(2) + "\n");
  write_text(dir / ("ablate_" + axis + ".tsv"), table.str());
  out << table.str();
  return kExitOk;
}

}  // namespace

void RunConfig::validate() const {
  try {
    scene.validate();
    model.validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (scene.canvas != model.canvas) throw ConfigError("invalid config: canvas mismatch between scene and model");
  if (model.queries < scene.objects_max) {
    throw ConfigError("invalid config: queries (N) must be >= objects_max");
  }
  if (train_scenes == 0) throw ConfigError("invalid config: train_scenes must be >= 1");
  if (eval_scenes == 0) throw ConfigError("invalid config: eval_scenes must be >= 1");
  if (budgets.empty()) throw ConfigError("invalid config: budgets must be non-empty");
  for (std::size_t k : budgets) {
    if (k == 0) throw ConfigError("invalid config: budgets entries must be >= 1");
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

RunConfig parse_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig config;
  for (const auto& [key, value] : j.items()) find_field(key).set(config, value);
  config.validate();
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read config file '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  find_field(key).set(config, value);
}

std::string config_json(const RunConfig& config) { return config_object(config).dump(2) + "\n"; }

std::vector<Scene> training_scenes(const RunConfig& config) {
  return dataset_split(config, "train", 0, config.train_scenes);
}

std::vector<Scene> evaluation_scenes(const RunConfig& config) {
  return dataset_split(config, "eval", config.train_scenes, config.eval_scenes);
}

std::vector<std::string> ablation_values(const std::string& axis) {
  if (axis == "k") return {"1", "2", "3", "4"};
  if (axis == "lambda") return {"1", "3", "5", "7", "9"};
  if (axis == "iterations") return {"0", "1", "2", "3"};
  if (axis == "modules") return {"full", "no_sia", "no_csp", "no_cgqs"};
  throw ConfigError("invalid config: axis must be one of k, lambda, iterations, modules (got '" + axis + "')");
}

RunConfig ablation_variant(const RunConfig& base, const std::string& axis, const std::string& value) {
  RunConfig c = base;
  if (axis == "k") {
    c.model.k = std::stoul(value);
  } else if (axis == "lambda") {
    c.train.lambda = std::stod(value);
  } else if (axis == "iterations") {
    c.model.csp.iterations = std::stoul(value);
  } else if (axis == "modules") {
    if (value == "no_sia") c.model.use_sia = false;
    else if (value == "no_csp") c.model.csp.iterations = 0;
    else if (value == "no_cgqs") c.model.use_cgqs = false;
    else if (value != "full") throw ConfigError("invalid config: unknown module variant '" + value + "'");
  } else {
    ablation_values(axis);
  }
  c.validate();
  return c;
}

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prompt-free region proposals on synthetic scenes"};
  app.name("pfrpn");
  app.require_subcommand(1, 1);
  std::string config_path, out_dir, data_dir, checkpoint, scene_id, axis;
  std::vector<std::string> sets;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--set", sets, "override one config key (key=value), repeatable")->allow_extra_args(false);
    sub->add_option("--out", out_dir, "output directory");
    return sub;
  };
  CLI::App* gen = common(app.add_subcommand("gen-data", "write train/ and eval/ datasets"));
  CLI::App* trn = common(app.add_subcommand("train", "train a model and write checkpoints"));
  trn->add_option("--data", data_dir, "dataset root written by gen-data");
  CLI::App* evl = common(app.add_subcommand("eval", "average recall on the evaluation split"));
  evl->add_option("--data", data_dir, "dataset root written by gen-data");
  evl->add_option("--checkpoint", checkpoint, "model checkpoint");
  CLI::App* prp = common(app.add_subcommand("propose", "ranked proposals for one scene as JSON"));
  prp->add_option("--data", data_dir, "dataset root written by gen-data");
  prp->add_option("--checkpoint", checkpoint, "model checkpoint");
  prp->add_option("--scene", scene_id, "scene id in the evaluation split (default: first)");
  CLI::App* abl = common(app.add_subcommand("ablate", "sweep one axis and tabulate AR"));
  abl->add_option("--data", data_dir, "dataset root written by gen-data");
  abl->add_option("--axis", axis, "k | lambda | iterations | modules")->required();
  CLI::App* hmp = common(app.add_subcommand("heatmap", "similarity maps, masks and query overlays"));
  hmp->add_option("--data", data_dir, "dataset root written by gen-data");
  hmp->add_option("--checkpoint", checkpoint, "model checkpoint");
  hmp->add_option("--scene", scene_id, "scene id in the evaluation split (default: first)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
    for (const std::string& s : sets) apply_override(config, s);
    if (!out_dir.empty()) config.out_dir = out_dir;
    if (!data_dir.empty()) config.data_dir = data_dir;
    if (!checkpoint.empty()) config.checkpoint = checkpoint;
    config.validate();

    if (gen->parsed()) return cmd_gen_data(config, out);
    if (trn->parsed()) return cmd_train(config, out);
    if (evl->parsed()) return cmd_eval(config, out);
    if (prp->parsed()) return cmd_propose(config, scene_id, out);
    if (abl->parsed()) return cmd_ablate(config, axis, out);
    if (hmp->parsed()) return cmd_heatmap(config, scene_id, out);
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace pfrpn::cli
