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

// Command-line surface: data generation, training, evaluation, proposals,
// ablation sweeps and heatmap exports, all driven by one flat JSON config.
#pragma once

#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "pfrpn/pipeline.hpp"

namespace pfrpn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

/// Raised for malformed or invalid configuration; the message names the field.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  SceneConfig scene;
  ModelConfig model;
  TrainConfig train;
  std::size_t train_scenes = 500;
  std::size_t eval_scenes = 100;
  std::vector<std::size_t> budgets = {1, 10, 32};
  std::string data_dir;    // empty: scenes are generated in memory
  std::string checkpoint;  // empty: seed-initialized model
  std::string out_dir = "out";

  /// Throws ConfigError.
  void validate() const;
};

/// Every accepted flat key, in serialization order.
std::vector<std::string> config_keys();

/// Parses a JSON object of flat keys over the defaults. Unknown keys, wrong
/// types and invalid values throw ConfigError.
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const std::string& path);

/// Applies one `key=value` override; the value is read as JSON when it parses
/// and as a string otherwise.
void apply_override(RunConfig& config, std::string_view assignment);

/// Fully resolved config as pretty-printed JSON.
std::string config_json(const RunConfig& config);

/// Training scenes (indices [0, train_scenes)) and held-out scenes (the next
/// eval_scenes indices), read from data_dir/{train,eval} when data_dir is set.
std::vector<Scene> training_scenes(const RunConfig& config);
std::vector<Scene> evaluation_scenes(const RunConfig& config);

/// Axis values swept by `ablate`.
std::vector<std::string> ablation_values(const std::string& axis);

/// Returns `base` with one ablation setting applied.
RunConfig ablation_variant(const RunConfig& base, const std::string& axis, const std::string& value);

/// Runs one subcommand; args exclude the program name.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace pfrpn::cli
