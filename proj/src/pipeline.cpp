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
#include "pfrpn/pipeline.hpp"

#include "pfrpn/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace pfrpn {

namespace {

constexpr std::size_t kLevels = 4;
// Stride of every backbone conv; the outputs of convs 2, 4, 6 and 8 are the
// four pyramid levels (strides 4, 8, 16, 32).
constexpr std::array<std::size_t, kBackboneConvs> kConvStride = {2, 2, 1, 2, 1, 2, 1, 2, 1};
constexpr std::array<std::size_t, kLevels> kLevelConv = {2, 4, 6, 8};

std::string field_error(const std::string& what) { return "invalid config: " + what; }

double logit(double p) { return std::log(p / (1.0 - p)); }

}  // namespace

void ModelConfig::validate() const {
  if (canvas < 16 || canvas % 16 != 0) {
    throw std::invalid_argument(field_error("canvas must be a positive multiple of 16"));
  }
  if (channels < 4 || channels % 4 != 0) {
    throw std::invalid_argument(field_error("channels must be a positive multiple of 4"));
  }
  for (std::size_t c : backbone_channels) {
    if (c == 0) throw std::invalid_argument(field_error("backbone_channels must be positive"));
  }
  if (ffn_hidden == 0) throw std::invalid_argument(field_error("ffn_hidden must be positive"));
  if (queries == 0) throw std::invalid_argument(field_error("queries (N) must be >= 1"));
  if (k < 1 || k > kLevels) throw std::invalid_argument(field_error("k must be in [1, 4]"));
  if (!(anchor_scale > 0.0 && anchor_scale * 8.0 < 1.0)) {
    throw std::invalid_argument(field_error("anchor_scale must be in (0, 0.125)"));
  }
  try {
    csp.validate();
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(field_error(e.what()));
  }
  for (int l : csp.level_order) {
    if (l > static_cast<int>(kLevels)) {
      throw std::invalid_argument(field_error("csp level_order entries must be in [1, 4]"));
    }
  }
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument(field_error("learning rate must be positive"));
  }
  if (epochs == 0) throw std::invalid_argument(field_error("epochs must be >= 1"));
  if (batch_size == 0) throw std::invalid_argument(field_error("batch size must be >= 1"));
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument(field_error("momentum must be in [0, 1)"));
  }
  if (optimizer != "sgd" && optimizer != "adam") {
    throw std::invalid_argument(field_error("optimizer must be \"sgd\" or \"adam\""));
  }
  if (!(grad_clip >= 0.0)) throw std::invalid_argument(field_error("grad_clip must be >= 0"));
  if (!(lambda >= 0.0)) throw std::invalid_argument(field_error("lambda must be >= 0"));
  if (!(focal_alpha > 0.0 && focal_alpha < 1.0)) {
    throw std::invalid_argument(field_error("focal_alpha must be in (0, 1)"));
  }
  if (!(focal_gamma >= 0.0)) throw std::invalid_argument(field_error("focal_gamma must be >= 0"));
  if (!(token_loss_weight >= 0.0)) {
    throw std::invalid_argument(field_error("token_loss_weight must be >= 0"));
  }
  for (double v : {match.cls, match.l1, match.giou, regression.l1, regression.giou}) {
    if (!(v >= 0.0)) throw std::invalid_argument(field_error("loss weights must be >= 0"));
  }
}

ModelVars bind_model(Graph& g, const ModelParams& params, bool trainable) {
  ModelVars vars;
  vars.conv_w.resize(params.conv_w.size());
  vars.conv_b.resize(params.conv_b.size());
  vars.lateral_w.resize(params.lateral_w.size());
  vars.lateral_b.resize(params.lateral_b.size());
  vars.decoder.resize(params.decoder.size());
  std::vector<const Tensor*> tensors;
  ModelParams::each(params, [&](const std::string&, const Tensor& t) { tensors.push_back(&t); });
  std::size_t i = 0;
  ModelVars::each(vars, [&](const std::string&, Var& v) {
    v = trainable ? g.parameter(*tensors[i]) : g.constant(*tensors[i]);
    ++i;
  });
  return vars;
}

ModelParams model_gradients(const ModelParams& params, const ModelVars& vars) {
  ModelParams grads = params;
  std::vector<Tensor*> out;
  ModelParams::each(grads, [&](const std::string&, Tensor& t) { out.push_back(&t); });
  std::size_t i = 0;
  ModelVars::each(vars, [&](const std::string&, const Var& v) {
    Tensor& t = *out[i++];
    if (v.grad().empty()) {
      t.fill(0.0);
    } else {
      t = v.grad();
    }
  });
  return grads;
}

std::vector<std::pair<std::string, Tensor*>> named_tensors(ModelParams& params) {
  std::vector<std::pair<std::string, Tensor*>> out;
  ModelParams::each(params, [&](const std::string& n, Tensor& t) { out.emplace_back(n, &t); });
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> named_tensors(const ModelParams& params) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  ModelParams::each(params, [&](const std::string& n, const Tensor& t) { out.emplace_back(n, &t); });
  return out;
}

TokenLayout make_layout(const ModelConfig& config) {
  config.validate();
  TokenLayout layout;
  std::size_t side = config.canvas;
  std::size_t stride = 1;
  std::size_t level = 0;
  for (std::size_t i = 0; i < kBackboneConvs; ++i) {
    side = conv_out_size(side, kConvStride[i]);
    stride *= kConvStride[i];
    if (level < kLevels && i == kLevelConv[level]) {
      layout.height[level] = side;
      layout.width[level] = side;
      layout.stride[level] = stride;
      ++level;
    }
  }
  const std::size_t c = config.channels;
  std::size_t total = 0;
  for (std::size_t l = 0; l < kLevels; ++l) {
    layout.offset[l] = total;
    total += layout.height[l] * layout.width[l];
  }
  layout.anchor_logits = Tensor::matrix(total, 4);
  layout.position_encoding = Tensor::matrix(total, c);
  const std::size_t half = c / 2;
  for (std::size_t l = 0; l < kLevels; ++l) {
    const double anchor = config.anchor_scale * static_cast<double>(std::size_t{1} << l);
    for (std::size_t y = 0; y < layout.height[l]; ++y) {
      for (std::size_t x = 0; x < layout.width[l]; ++x) {
        const std::size_t row = layout.positions.size();
        const Point p{(static_cast<double>(x) + 0.5) / static_cast<double>(layout.width[l]),
                      (static_cast<double>(y) + 0.5) / static_cast<double>(layout.height[l])};
        layout.positions.push_back(p);
        layout.levels.push_back(static_cast<int>(l + 1));
        layout.level_index.push_back(l);
        layout.anchor_logits.at(row, 0) = logit(p.x);
        layout.anchor_logits.at(row, 1) = logit(p.y);
        layout.anchor_logits.at(row, 2) = logit(anchor);
        layout.anchor_logits.at(row, 3) = logit(anchor);
        // First half encodes y, second half x; sine on even, cosine on odd channels.
        for (std::size_t i = 0; i < half; ++i) {
          const double freq = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(half));
          const double ay = p.y * 2.0 * std::numbers::pi / freq;
          const double ax = p.x * 2.0 * std::numbers::pi / freq;
          layout.position_encoding.at(row, i) = i % 2 == 0 ? std::sin(ay) : std::cos(ay);
          layout.position_encoding.at(row, half + i) = i % 2 == 0 ? std::sin(ax) : std::cos(ax);
        }
      }
    }
  }
  for (std::size_t l = 0; l + 1 < kLevels; ++l) {
    auto& map = layout.upsample[l];
    for (std::size_t y = 0; y < layout.height[l]; ++y) {
      for (std::size_t x = 0; x < layout.width[l]; ++x) {
        const std::size_t py = std::min(y / 2, layout.height[l + 1] - 1);
        const std::size_t px = std::min(x / 2, layout.width[l + 1] - 1);
        map.push_back(py * layout.width[l + 1] + px);
      }
    }
  }
  return layout;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed, 0x11);
  const std::size_t c = config.channels;
  const auto& bc = config.backbone_channels;
  ModelParams p;
  const std::array<std::size_t, kBackboneConvs> cin = {3, bc[0], bc[0], bc[0], bc[1], bc[1], bc[2], bc[2], bc[3]};
  const std::array<std::size_t, kBackboneConvs> cout = {bc[0], bc[0], bc[0], bc[1], bc[1], bc[2], bc[2], bc[3], bc[3]};
  for (std::size_t i = 0; i < kBackboneConvs; ++i) {
    p.conv_w.push_back(he_normal(9 * cin[i], cout[i], rng));
    // A small positive bias keeps all-zero patches off the ReLU kink.
    p.conv_b.push_back(Tensor::matrix(1, cout[i], 0.01));
  }
  for (std::size_t l = 0; l < kLevels; ++l) {
    p.lateral_w.push_back(glorot_normal(bc[l], c, rng));
    p.lateral_b.push_back(Tensor::matrix(1, c));
  }
  p.embedding = random_normal(1, c, 1.0 / std::sqrt(static_cast<double>(c)), rng);
  p.level_embed = random_normal(kLevels, c, 0.1, rng);
  p.sia = init_sia_params(c, rng);
  p.center = init_center_net(c, rng);
  // Small box heads start near the anchors without sitting on the shared lattice.
  p.token_box_hw = he_normal(c, c, rng);
  p.token_box_hb = Tensor::matrix(1, c);
  p.token_box_w = random_normal(c, 4, 0.02, rng);
  p.token_box_b = Tensor::matrix(1, 4);
  for (std::size_t i = 0; i < config.decoder_layers; ++i) {
    DecoderLayerWeights<Tensor> d;
    d.sa_wq = glorot_normal(c, c, rng);
    d.sa_wk = glorot_normal(c, c, rng);
    d.sa_wv = glorot_normal(c, c, rng);
    d.sa_wo = glorot_normal(c, c, rng);
    d.ca_wq = glorot_normal(c, c, rng);
    d.ca_wk = glorot_normal(c, c, rng);
    d.ca_wv = glorot_normal(c, c, rng);
    d.ca_wo = glorot_normal(c, c, rng);
    d.ffn_w1 = he_normal(c, config.ffn_hidden, rng);
    d.ffn_b1 = Tensor::matrix(1, config.ffn_hidden);
    d.ffn_w2 = glorot_normal(config.ffn_hidden, c, rng);
    d.ffn_b2 = Tensor::matrix(1, c);
    p.decoder.push_back(std::move(d));
  }
  p.box_hw = he_normal(c, c, rng);
  p.box_hb = Tensor::matrix(1, c);
  p.box_w = random_normal(c, 4, 0.02, rng);
  p.box_b = Tensor::matrix(1, 4);
  return p;
}

Model::Model(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), layout_(make_layout(config_)), params_(init_params(config_, seed)) {}

Model::Model(ModelConfig config, ModelParams params)
    : config_(std::move(config)), layout_(make_layout(config_)), params_(std::move(params)) {}

std::vector<LevelVar> Model::backbone(Graph& g, const ModelVars& w, const Image& image) const {
  if (image.width != config_.canvas || image.height != config_.canvas || image.channels != 3) {
    throw std::invalid_argument("backbone: expected a " + std::to_string(config_.canvas) + "x" +
                                std::to_string(config_.canvas) + "x3 image, got " +
                                std::to_string(image.width) + "x" + std::to_string(image.height) +
                                "x" + std::to_string(image.channels));
  }
  Tensor input = Tensor::matrix(image.width * image.height, 3, image.pixels);
  for (double& v : input.storage()) v -= 0.5;
  Var x = g.constant(std::move(input));
  std::size_t side = config_.canvas;
  std::array<Var, kLevels> raw;
  std::size_t level = 0;
  for (std::size_t i = 0; i < kBackboneConvs; ++i) {
    x = ad::relu(ad::conv3x3(x, side, side, w.conv_w[i], w.conv_b[i], kConvStride[i]));
    side = conv_out_size(side, kConvStride[i]);
    if (level < kLevels && i == kLevelConv[level]) raw[level++] = x;
  }
  // Lateral projections, then top-down fusion so fine levels see coarse context.
  std::array<Var, kLevels> fused;
  for (std::size_t l = kLevels; l-- > 0;) {
    Var lat = ad::add_row(ad::matmul(raw[l], w.lateral_w[l]), w.lateral_b[l]);
    fused[l] = l + 1 < kLevels ? ad::add(lat, ad::gather_rows(fused[l + 1], layout_.upsample[l])) : lat;
  }
  std::vector<LevelVar> out;
  for (std::size_t l = 0; l < kLevels; ++l) {
    out.push_back({static_cast<int>(l + 1), layout_.height[l], layout_.width[l], layout_.stride[l], fused[l]});
  }
  return out;
}

namespace {

// Single-head attention with the projections reassociated so that keys and
// values are never projected token by token.
Var attend(Var query, Var keys, Var values, Var wq, Var wk, Var wv, Var wo) {
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(query.cols()));
  Var qk = ad::matmul_nt(ad::matmul(query, wq), wk);
  Var weights = ad::softmax_rows(ad::scale(ad::matmul_nt(qk, keys), inv_sqrt_c));
  return ad::matmul(ad::matmul(ad::matmul(weights, values), wv), wo);
}

Var decoder_layer(Var q, Var qpos, Var memory, Var memory_keys, const DecoderLayerWeights<Var>& d) {
  Var qp = ad::add(q, qpos);
  q = ad::layer_norm_rows(ad::add(q, attend(qp, qp, q, d.sa_wq, d.sa_wk, d.sa_wv, d.sa_wo)));
  qp = ad::add(q, qpos);
  q = ad::layer_norm_rows(
      ad::add(q, attend(qp, memory_keys, memory, d.ca_wq, d.ca_wk, d.ca_wv, d.ca_wo)));
  Var h = ad::relu(ad::add_row(ad::matmul(q, d.ffn_w1), d.ffn_b1));
  return ad::layer_norm_rows(ad::add(q, ad::add_row(ad::matmul(h, d.ffn_w2), d.ffn_b2)));
}

double sigmoid_value(double x) { return sigmoid(x); }

Var box_head(Var x, Var hw, Var hb, Var w, Var b) {
  Var h = ad::relu(ad::add_row(ad::matmul(x, hw), hb));
  return ad::add_row(ad::matmul(h, w), b);
}

}  // namespace

GraphOutputs Model::run(Graph& g, const ModelVars& w, const Image& image, Decisions* record,
                        const Decisions* frozen) const {
  GraphOutputs out;
  out.levels = backbone(g, w, image);
  const double logit_scale = 1.0 / std::sqrt(static_cast<double>(config_.channels));

  Var state = w.embedding;
  if (config_.use_sia) {
    const RouterOutput* fixed = frozen && frozen->routing ? &*frozen->routing : nullptr;
    out.sia = sia_forward(state, out.levels, w.sia, config_.k, fixed);
    state = out.sia.refined;
    if (record) record->routing = out.sia.routing;
  }
  if (config_.use_csp) {
    MaskRecord masks;
    const MaskRecord* fixed = frozen && frozen->masks ? &*frozen->masks : nullptr;
    state = csp_refine(state, out.levels, config_.csp, &masks, fixed);
    if (record) record->masks = std::move(masks);
  }
  out.refined = state;

  std::vector<Var> grids;
  for (const auto& lv : out.levels) grids.push_back(lv.grid);
  out.memory = ad::concat_rows(grids);
  out.token_logits = classification_logits(out.memory, out.refined, logit_scale);
  out.center_logits = center_logits(out.memory, w.center);
  out.token_box_logits = ad::add(g.constant(layout_.anchor_logits),
                                 box_head(out.memory, w.token_box_hw, w.token_box_hb, w.token_box_w, w.token_box_b));

  if (frozen && frozen->selected) {
    out.selected = *frozen->selected;
  } else {
    const Tensor& cls = out.token_logits.value();
    const Tensor& ctr = out.center_logits.value();
    std::vector<double> scores(cls.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      scores[i] = sigmoid_value(cls[i]) * (config_.use_cgqs ? sigmoid_value(ctr[i]) : 1.0);
    }
    out.selected = select_top(scores, config_.queries);
  }
  if (record) record->selected = out.selected;

  Var pos = ad::add(g.constant(layout_.position_encoding), ad::gather_rows(w.level_embed, layout_.level_index));
  Var memory_keys = ad::add(out.memory, pos);
  Var q = ad::gather_rows(out.memory, out.selected);
  Var qpos = ad::gather_rows(pos, out.selected);
  for (const auto& layer : w.decoder) q = decoder_layer(q, qpos, out.memory, memory_keys, layer);

  out.query_logits = classification_logits(q, out.refined, logit_scale);
  Var reference = ad::gather_rows(out.token_box_logits, out.selected);
  out.boxes = ad::sigmoid(ad::add(reference, box_head(q, w.box_hw, w.box_hb, w.box_w, w.box_b)));
  return out;
}

std::vector<LevelFeatures> backbone_forward(const Model& model, const Image& image) {
  Graph g;
  const ModelVars w = bind_model(g, model.params(), false);
  std::vector<LevelFeatures> out;
  for (const auto& lv : model.backbone(g, w, image)) {
    out.push_back({lv.level, lv.height, lv.width, lv.stride, lv.grid.value()});
  }
  return out;
}

ForwardResult forward(const Model& model, const Image& image) {
  Graph g;
  const ModelVars w = bind_model(g, model.params(), false);
  Decisions record;
  const GraphOutputs out = model.run(g, w, image, &record);
  const ModelConfig& cfg = model.config();
  const TokenLayout& layout = model.layout();

  ForwardResult result;
  for (const auto& lv : out.levels) {
    result.levels.push_back({lv.level, lv.height, lv.width, lv.stride, lv.grid.value()});
  }
  result.embedding = w.embedding.value();
  result.refined = out.refined.value();
  if (record.routing) result.routing = *record.routing;
  if (record.masks) result.masks = *record.masks;

  const Tensor& cls = out.token_logits.value();
  const Tensor& ctr = out.center_logits.value();
  for (std::size_t i : out.selected) {
    QueryToken t;
    t.index = i;
    t.position = layout.positions[i];
    t.level = layout.levels[i];
    t.cls_score = sigmoid_value(cls[i]);
    t.center_score = sigmoid_value(ctr[i]);
    t.combined = cfg.use_cgqs ? t.cls_score * t.center_score : t.cls_score;
    result.queries.push_back(t);
  }

  const Tensor& logits = out.query_logits.value();
  const Tensor& boxes = out.boxes.value();
  for (std::size_t j = 0; j < out.selected.size(); ++j) {
    double score = sigmoid_value(logits[j]);
    if (cfg.use_cgqs && cfg.rank_with_center) score *= result.queries[j].center_score;
    BoxXYXY b = to_xyxy({boxes.at(j, 0), boxes.at(j, 1), boxes.at(j, 2), boxes.at(j, 3)});
    b.x1 = std::clamp(b.x1, 0.0, 1.0);
    b.y1 = std::clamp(b.y1, 0.0, 1.0);
    b.x2 = std::clamp(b.x2, 0.0, 1.0);
    b.y2 = std::clamp(b.y2, 0.0, 1.0);
    result.proposals.push_back({b, score});
  }
  std::stable_sort(result.proposals.begin(), result.proposals.end(),
                   [](const Proposal& a, const Proposal& b) { return a.score > b.score; });
  return result;
}

namespace {

std::vector<BoxCCWH> ccwh_boxes(std::span<const BoxXYXY> boxes) {
  std::vector<BoxCCWH> out;
  for (const auto& b : boxes) out.push_back(to_ccwh(b));
  return out;
}

std::vector<BoxCCWH> rows_as_boxes(const Tensor& t) {
  std::vector<BoxCCWH> out;
  for (std::size_t i = 0; i < t.rows(); ++i) out.push_back({t.at(i, 0), t.at(i, 1), t.at(i, 2), t.at(i, 3)});
  return out;
}

// Level whose anchor side is closest to the box's longer side in log scale.
std::size_t assigned_level(const BoxXYXY& box, double anchor_scale) {
  const double side = std::max(box.x2 - box.x1, box.y2 - box.y1);
  const double l = std::round(std::log2(std::max(side, 1e-12) / anchor_scale));
  return static_cast<std::size_t>(std::clamp(l, 0.0, static_cast<double>(kLevels - 1)));
}

struct TokenTargets {
  std::vector<std::size_t> positives;
  std::vector<std::size_t> box_of;  // parallel to positives
  std::vector<double> weight;       // regression weight, parallel to positives
};

// Scale-aware token targets: a token is positive for the smallest box that
// contains it when its level matches the box size. The cell holding each box
// center on the matching level is always positive, so thin boxes keep one.
TokenTargets token_targets(const TokenLayout& layout, const CenterTargets& inside,
                           std::span<const BoxXYXY> boxes, double anchor_scale) {
  TokenTargets t;
  std::vector<std::uint8_t> taken(layout.tokens(), 0);
  std::vector<std::size_t> level_of(boxes.size());
  for (std::size_t b = 0; b < boxes.size(); ++b) level_of[b] = assigned_level(boxes[b], anchor_scale);
  for (std::size_t i : inside.positives) {
    const auto b = static_cast<std::size_t>(inside.box_of[i]);
    if (static_cast<std::size_t>(layout.levels[i] - 1) != level_of[b]) continue;
    t.positives.push_back(i);
    t.box_of.push_back(b);
    t.weight.push_back(std::max(inside.targets[i], 0.1));
    taken[i] = 1;
  }
  for (std::size_t b = 0; b < boxes.size(); ++b) {
    const std::size_t l = level_of[b];
    const Point c{0.5 * (boxes[b].x1 + boxes[b].x2), 0.5 * (boxes[b].y1 + boxes[b].y2)};
    const auto cx = std::min(static_cast<std::size_t>(c.x * layout.width[l]), layout.width[l] - 1);
    const auto cy = std::min(static_cast<std::size_t>(c.y * layout.height[l]), layout.height[l] - 1);
    const std::size_t i = layout.offset[l] + cy * layout.width[l] + cx;
    if (taken[i]) continue;
    t.positives.push_back(i);
    t.box_of.push_back(b);
    t.weight.push_back(0.1);
    taken[i] = 1;
  }
  return t;
}

// Dense per-token terms: focal objectness for every token and centerness
// weighted box regression on the positives.
std::pair<Var, Var> token_losses(Graph& g, const GraphOutputs& out, const TokenTargets& targets,
                                 std::span<const BoxCCWH> gt, const TrainConfig& cfg) {
  const std::size_t m = out.token_logits.rows();
  Tensor labels = Tensor::matrix(m, 1);
  for (std::size_t i : targets.positives) labels[i] = 1.0;
  const double npos = static_cast<double>(std::max<std::size_t>(1, targets.positives.size()));
  Var cls = ad::scale(ad::sum(ad::sigmoid_focal(out.token_logits, labels, cfg.focal_alpha, cfg.focal_gamma)),
                      1.0 / npos);
  if (targets.positives.empty()) return {g.constant(Tensor::scalar(0.0)), cls};

  double weight_sum = 0.0;
  for (double w : targets.weight) weight_sum += w;
  Tensor goal = Tensor::matrix(targets.positives.size(), 4);
  Tensor weights = Tensor::matrix(targets.positives.size(), 1);
  for (std::size_t r = 0; r < targets.positives.size(); ++r) {
    const BoxCCWH& b = gt[targets.box_of[r]];
    goal.at(r, 0) = b.cx;
    goal.at(r, 1) = b.cy;
    goal.at(r, 2) = b.w;
    goal.at(r, 3) = b.h;
    weights[r] = targets.weight[r] / weight_sum;
  }
  Var pred = ad::sigmoid(ad::gather_rows(out.token_box_logits, targets.positives));
  Var tgt = g.constant(std::move(goal));
  Var l1 = ad::scale(ad::sum_cols(ad::abs(ad::sub(pred, tgt))), cfg.regression.l1);
  Var gi = ad::scale(ad::add_scalar(ad::scale(giou_rows(pred, tgt), -1.0), 1.0), cfg.regression.giou);
  Var reg = ad::sum(ad::mul(ad::add(l1, gi), g.constant(std::move(weights))));
  return {reg, cls};
}

}  // namespace

LossVars build_loss(Graph& g, const Model& model, const ModelVars& w, const Scene& scene,
                    const TrainConfig& cfg, Decisions* record, const Decisions* frozen) {
  const ModelConfig& mc = model.config();
  const GraphOutputs out = model.run(g, w, scene.image, record, frozen);
  const auto& boxes = scene.annotation.boxes;
  const std::vector<BoxCCWH> gt = ccwh_boxes(boxes);

  auto require_finite = [](const Tensor& t, const char* part) {
    for (double v : t.values()) {
      if (!std::isfinite(v)) throw TrainingStepError(std::string("non-finite ") + part);
    }
  };
  require_finite(out.query_logits.value(), "classification loss (decoder logits)");
  require_finite(out.boxes.value(), "regression loss (decoder boxes)");

  MatchResult match;
  if (frozen && frozen->match) {
    match = *frozen->match;
  } else {
    const Tensor& lg = out.query_logits.value();
    const Tensor cost = matching_cost(lg.values(), rows_as_boxes(out.boxes.value()), gt, cfg.match);
    match = hungarian_match(cost);
  }
  if (record) record->match = match;

  const CenterTargets targets = center_targets(model.layout().positions, boxes);
  const TokenTargets assigned = token_targets(model.layout(), targets, boxes, mc.anchor_scale);
  auto [token_reg, token_cls] = token_losses(g, out, assigned, gt, cfg);

  LossVars l;
  l.reg = ad::add(regression_loss(out.boxes, gt, match, cfg.regression),
                  ad::scale(token_reg, cfg.token_loss_weight));
  l.cls = ad::add(classification_loss(out.query_logits, match, cfg.focal_alpha, cfg.focal_gamma),
                  ad::scale(token_cls, cfg.token_loss_weight));
  l.rt = mc.use_sia ? router_balance_loss(out.sia.raw) : g.constant(Tensor::scalar(0.0));
  l.ctr = mc.use_cgqs ? centerness_loss(ad::sigmoid(out.center_logits), targets)
                      : g.constant(Tensor::scalar(0.0));
  l.total = ad::add(ad::add(ad::add(l.reg, l.cls), l.rt), ad::scale(l.ctr, cfg.lambda));
  return l;
}

namespace {

LossBreakdown checked_breakdown(const LossVars& l, const Scene& scene, double lambda) {
  try {
    LossBreakdown b = total_loss(l.reg.value()[0], l.cls.value()[0], l.rt.value()[0], l.ctr.value()[0], lambda);
    if (!std::isfinite(l.total.value()[0])) throw TrainingStepError("non-finite total loss");
    b.total = l.total.value()[0];
    return b;
  } catch (const TrainingStepError& e) {
    throw TrainingStepError("scene " + scene.id + ": " + e.what());
  }
}

LossVars scene_graph(Graph& g, const Model& model, const ModelVars& w, const Scene& scene,
                     const TrainConfig& config) {
  try {
    return build_loss(g, model, w, scene, config);
  } catch (const TrainingStepError& e) {
    throw TrainingStepError("scene " + scene.id + ": " + e.what());
  }
}

}  // namespace

StepResult loss_and_gradients(const Model& model, const Scene& scene, const TrainConfig& config) {
  Graph g;
  const ModelVars w = bind_model(g, model.params(), true);
  const LossVars l = scene_graph(g, model, w, scene, config);
  StepResult r;
  r.loss = checked_breakdown(l, scene, config.lambda);
  g.backward(l.total);
  r.gradients = model_gradients(model.params(), w);
  return r;
}

LossBreakdown scene_loss(const Model& model, const Scene& scene, const TrainConfig& config) {
  Graph g;
  const ModelVars w = bind_model(g, model.params(), false);
  return checked_breakdown(scene_graph(g, model, w, scene, config), scene, config.lambda);
}

namespace {

struct Optimizer {
  const TrainConfig& cfg;
  std::vector<Tensor> first, second;
  std::size_t step = 0;

  explicit Optimizer(const TrainConfig& c, const ModelParams& params) : cfg(c) {
    for (const auto& [name, t] : named_tensors(params)) {
      first.emplace_back(t->shape(), 0.0);
      second.emplace_back(t->shape(), 0.0);
    }
  }

  void apply(ModelParams& params, ModelParams& grads, double lr) {
    auto p = named_tensors(params);
    auto gr = named_tensors(grads);
    if (cfg.grad_clip > 0.0) {
      double sq = 0.0;
      for (const auto& [n, t] : gr) {
        for (double v : t->values()) sq += v * v;
      }
      const double norm = std::sqrt(sq);
      if (norm > cfg.grad_clip) {
        const double s = cfg.grad_clip / norm;
        for (auto& [n, t] : gr) {
          for (double& v : t->storage()) v *= s;
        }
      }
    }
    ++step;
    for (std::size_t i = 0; i < p.size(); ++i) {
      auto& w = p[i].second->storage();
      const auto& g = gr[i].second->storage();
      auto& m = first[i].storage();
      if (cfg.optimizer == "adam") {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        auto& v = second[i].storage();
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
        for (std::size_t j = 0; j < w.size(); ++j) {
          m[j] = b1 * m[j] + (1.0 - b1) * g[j];
          v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
          w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps);
        }
      } else {
        for (std::size_t j = 0; j < w.size(); ++j) {
          m[j] = cfg.momentum * m[j] + g[j];
          w[j] -= lr * m[j];
        }
      }
    }
  }
};

void add_into(ModelParams& acc, const ModelParams& g) {
  auto a = named_tensors(acc);
  auto b = named_tensors(g);
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto& x = a[i].second->storage();
    const auto& y = b[i].second->storage();
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += y[j];
  }
}

void scale_all(ModelParams& p, double s) {
  for (auto& [n, t] : named_tensors(p)) {
    for (double& v : t->storage()) v *= s;
  }
}

}  // namespace


std::vector<EpochLog> train(Model& model, std::span<const Scene> scenes, const TrainConfig& config,
                            const TrainOptions& options) {
  config.validate();
  if (scenes.empty()) throw std::invalid_argument("train: empty dataset");
  for (const Scene& s : scenes) {
    if (s.annotation.boxes.size() > model.config().queries) {
      throw std::invalid_argument("train: scene " + s.id + " has more boxes than queries (N)");
    }
  }
  Optimizer opt(config, model.params());
  Rng rng(config.seed, 0x7a1);
  std::vector<EpochLog> log;
  std::vector<std::size_t> order(scenes.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i) - 1));
      std::swap(order[i - 1], order[j]);
    }
    LossBreakdown sum;
    sum.lambda = config.lambda;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      ModelParams acc;
      for (std::size_t b = start; b < end; ++b) {
        const Scene& scene = scenes[order[b]];
        const unsigned transform = config.augment ? static_cast<unsigned>(rng.integer(0, 7)) : 0u;
        StepResult r = transform == 0 ? loss_and_gradients(model, scene, config)
                                      : loss_and_gradients(model, dihedral_transform(scene, transform), config);
        if (b == start) {
          acc = std::move(r.gradients);
        } else {
          add_into(acc, r.gradients);
        }
        sum.reg += r.loss.reg;
        sum.cls += r.loss.cls;
        sum.rt += r.loss.rt;
        sum.ctr += r.loss.ctr;
        sum.total += r.loss.total;
      }
      scale_all(acc, 1.0 / static_cast<double>(end - start));
      const bool dropped = config.lr_drop_epoch > 0 && epoch > config.lr_drop_epoch;
      opt.apply(model.params(), acc, dropped ? 0.1 * config.learning_rate : config.learning_rate);
    }
    const double n = static_cast<double>(scenes.size());
    EpochLog entry;
    entry.epoch = epoch;
    entry.mean = {sum.reg / n, sum.cls / n, sum.rt / n, sum.ctr / n, config.lambda, sum.total / n};
    log.push_back(entry);
    if (options.checkpoint_dir) {
      std::filesystem::create_directories(*options.checkpoint_dir);
      save_checkpoint(model.params(), *options.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".pfrp"));
    }
    if (options.on_epoch) options.on_epoch(entry);
  }
  return log;
}

EvalReport evaluate_proposals(std::span<const std::vector<BoxXYXY>> proposals,
                              std::span<const Scene> scenes, std::span<const std::size_t> budgets) {
  std::vector<std::vector<BoxXYXY>> gt;
  for (const Scene& s : scenes) gt.push_back(s.annotation.boxes);
  EvalReport report;
  report.images = scenes.size();
  report.budgets.assign(budgets.begin(), budgets.end());
  for (std::size_t k : budgets) report.recall.push_back(average_recall(proposals, gt, k));
  return report;
}

EvalReport evaluate(const Model& model, std::span<const Scene> scenes,
                    std::span<const std::size_t> budgets) {
  std::vector<std::vector<BoxXYXY>> proposals;
  for (const Scene& s : scenes) {
    std::vector<BoxXYXY> boxes;
    for (const auto& p : forward(model, s.image).proposals) boxes.push_back(p.box);
    proposals.push_back(std::move(boxes));
  }
  return evaluate_proposals(proposals, scenes, budgets);
}

}  // namespace pfrpn
