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

// End-to-end proposal model: toy conv backbone with top-down fusion, the
// sparse image-aware adapter, cascade self-prompting, centerness-guided
// query selection and a small transformer decoder.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pfrpn/cgqs.hpp"
#include "pfrpn/csp.hpp"
#include "pfrpn/features.hpp"
#include "pfrpn/matching_loss.hpp"
#include "pfrpn/sia.hpp"
#include "pfrpn/synthdata.hpp"

namespace pfrpn {

struct ModelConfig {
  std::size_t canvas = 128;
  std::size_t channels = 64;
  std::array<std::size_t, 4> backbone_channels = {16, 32, 64, 64};
  std::size_t decoder_layers = 2;
  std::size_t ffn_hidden = 128;
  std::size_t queries = 32;
  std::size_t k = 2;
  CspConfig csp;
  bool use_sia = true;
  bool use_csp = true;
  bool use_cgqs = true;
  /// Multiply the decoder score by the query's center score when ranking.
  bool rank_with_center = true;
  /// Anchor side at level l is anchor_scale * 2^(l-1).
  double anchor_scale = 0.05;

  void validate() const;
};

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t epochs = 10;
  std::size_t batch_size = 4;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::string optimizer = "sgd";  // "sgd" (momentum) or "adam"
  double grad_clip = 1.0;         // global norm; 0 disables
  /// Epoch after which the learning rate drops tenfold; 0 keeps it constant.
  std::size_t lr_drop_epoch = 0;
  double lambda = 5.0;
  MatchCostWeights match;
  RegressionWeights regression;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  /// Weight of the dense per-token objectness and box terms.
  double token_loss_weight = 1.0;
  /// Train each scene under a random symmetry of the square canvas.
  bool augment = true;

  void validate() const;
};

template <typename T>
struct DecoderLayerWeights {
  T sa_wq, sa_wk, sa_wv, sa_wo;
  T ca_wq, ca_wk, ca_wv, ca_wo;
  T ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  template <typename Self, typename F>
  static void each(Self& s, F&& f) {
    f("sa_wq", s.sa_wq);
    f("sa_wk", s.sa_wk);
    f("sa_wv", s.sa_wv);
    f("sa_wo", s.sa_wo);
    f("ca_wq", s.ca_wq);
    f("ca_wk", s.ca_wk);
    f("ca_wv", s.ca_wv);
    f("ca_wo", s.ca_wo);
    f("ffn_w1", s.ffn_w1);
    f("ffn_b1", s.ffn_b1);
    f("ffn_w2", s.ffn_w2);
    f("ffn_b2", s.ffn_b2);
  }
};

inline constexpr std::size_t kBackboneConvs = 9;

template <typename T>
struct ModelWeights {
  std::vector<T> conv_w, conv_b;        // backbone, kBackboneConvs each
  std::vector<T> lateral_w, lateral_b;  // per level, to the common width
  T embedding;                          // 1 x C learnable prompt
  T level_embed;                        // 4 x C
  SiaWeights<T> sia;
  CenterNetWeights<T> center;
  T token_box_hw, token_box_hb;  // per-token box head, hidden layer
  T token_box_w, token_box_b;    // per-token box deltas
  std::vector<DecoderLayerWeights<T>> decoder;
  T box_hw, box_hb;  // decoder box head, hidden layer
  T box_w, box_b;    // decoder box deltas

  template <typename Self, typename F>
  static void each(Self& s, F&& f) {
    for (std::size_t i = 0; i < s.conv_w.size(); ++i) {
      f("backbone.conv" + std::to_string(i) + ".w", s.conv_w[i]);
      f("backbone.conv" + std::to_string(i) + ".b", s.conv_b[i]);
    }
    for (std::size_t i = 0; i < s.lateral_w.size(); ++i) {
      f("lateral" + std::to_string(i + 1) + ".w", s.lateral_w[i]);
      f("lateral" + std::to_string(i + 1) + ".b", s.lateral_b[i]);
    }
    f("embedding", s.embedding);
    f("level_embed", s.level_embed);
    SiaWeights<T>::each(s.sia, [&](const std::string& n, auto& m) { f("sia." + n, m); });
    CenterNetWeights<T>::each(s.center, [&](const std::string& n, auto& m) { f("center." + n, m); });
    f("token_box.hidden_w", s.token_box_hw);
    f("token_box.hidden_b", s.token_box_hb);
    f("token_box.w", s.token_box_w);
    f("token_box.b", s.token_box_b);
    for (std::size_t i = 0; i < s.decoder.size(); ++i) {
      DecoderLayerWeights<T>::each(s.decoder[i], [&](const std::string& n, auto& m) {
        f("decoder" + std::to_string(i) + "." + n, m);
      });
    }
    f("box.hidden_w", s.box_hw);
    f("box.hidden_b", s.box_hb);
    f("box.w", s.box_w);
    f("box.b", s.box_b);
  }
};

using ModelParams = ModelWeights<Tensor>;
using ModelVars = ModelWeights<Var>;

/// Binds every parameter into `g`; `trainable` selects parameter vs constant leaves.
ModelVars bind_model(Graph& g, const ModelParams& params, bool trainable);
/// Gradients of a bound model; parameters without gradient get zeros.
ModelParams model_gradients(const ModelParams& params, const ModelVars& vars);
std::vector<std::pair<std::string, Tensor*>> named_tensors(ModelParams& params);
std::vector<std::pair<std::string, const Tensor*>> named_tensors(const ModelParams& params);

/// Token geometry of the flattened memory for one canvas size.
struct TokenLayout {
  std::array<std::size_t, 4> height{}, width{}, stride{}, offset{};
  std::vector<Point> positions;  // cell centers, normalized
  std::vector<int> levels;       // 1-based
  std::vector<std::size_t> level_index;  // 0-based, for gathering level embeddings
  Tensor anchor_logits;          // M x 4, inverse sigmoid of the anchor boxes
  Tensor position_encoding;      // M x C sinusoidal
  /// upsample[l][i]: cell of level l+2 (1-based) feeding cell i of level l+1.
  std::array<std::vector<std::size_t>, 3> upsample;
  std::size_t tokens() const { return positions.size(); }
};

TokenLayout make_layout(const ModelConfig& config);

/// Discrete choices made during a forward/loss pass. Recording them and
/// replaying them keeps finite-difference checks on one smooth piece.
struct Decisions {
  std::optional<RouterOutput> routing;
  std::optional<MaskRecord> masks;
  std::optional<std::vector<std::size_t>> selected;
  std::optional<MatchResult> match;
};

struct GraphOutputs {
  std::vector<LevelVar> levels;
  SiaResult sia;  // empty raw list when the adapter is disabled
  Var refined;    // embedding after adapter and cascade
  Var memory;     // M x C
  Var token_logits;    // M x 1
  Var center_logits;   // M x 1
  Var token_box_logits;  // M x 4, logit space
  std::vector<std::size_t> selected;
  Var query_logits;  // N x 1
  Var boxes;         // N x 4 ccwh in (0,1)
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  Model(ModelConfig config, ModelParams params);

  const ModelConfig& config() const { return config_; }
  ModelConfig& mutable_config() { return config_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  const TokenLayout& layout() const { return layout_; }

  /// Builds the forward graph on `image` with already bound weights.
  GraphOutputs run(Graph& g, const ModelVars& w, const Image& image, Decisions* record = nullptr,
                   const Decisions* frozen = nullptr) const;

  /// Multi-level features only.
  std::vector<LevelVar> backbone(Graph& g, const ModelVars& w, const Image& image) const;

 private:
  ModelConfig config_;
  TokenLayout layout_;
  ModelParams params_;
};

ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Plain-value convenience wrapper around Model::backbone.
std::vector<LevelFeatures> backbone_forward(const Model& model, const Image& image);

struct Proposal {
  BoxXYXY box;
  double score = 0.0;
};

struct ForwardResult {
  std::vector<Proposal> proposals;  // ranked by score, descending
  std::vector<LevelFeatures> levels;
  Tensor embedding;                 // learnable prompt before refinement
  Tensor refined;
  RouterOutput routing;             // empty when the adapter is disabled
  MaskRecord masks;
  std::vector<QueryToken> queries;  // selected tokens with their scores
};

ForwardResult forward(const Model& model, const Image& image);

struct LossVars {
  Var reg, cls, rt, ctr, total;
};

/// Loss graph for one scene on top of a bound model.
LossVars build_loss(Graph& g, const Model& model, const ModelVars& w, const Scene& scene,
                    const TrainConfig& config, Decisions* record = nullptr,
                    const Decisions* frozen = nullptr);

struct StepResult {
  LossBreakdown loss;
  ModelParams gradients;
};

/// Loss and parameter gradients for one scene. Throws TrainingStepError
/// naming the scene and the offending part on non-finite values.
StepResult loss_and_gradients(const Model& model, const Scene& scene, const TrainConfig& config);

/// Loss value only.
LossBreakdown scene_loss(const Model& model, const Scene& scene, const TrainConfig& config);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  LossBreakdown mean;     // per-image mean of every part
};

struct TrainOptions {
  /// When set, epoch_<e>.pfrp is written here after every epoch.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(const EpochLog&)> on_epoch;
};

std::vector<EpochLog> train(Model& model, std::span<const Scene> scenes, const TrainConfig& config,
                            const TrainOptions& options = {});

struct EvalReport {
  std::vector<std::size_t> budgets;
  std::vector<AverageRecall> recall;  // one per budget
  std::size_t images = 0;
};

EvalReport evaluate(const Model& model, std::span<const Scene> scenes,
                    std::span<const std::size_t> budgets);
EvalReport evaluate_proposals(std::span<const std::vector<BoxXYXY>> proposals,
                              std::span<const Scene> scenes, std::span<const std::size_t> budgets);

}  // namespace pfrpn
