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
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "pfrpn/cli.hpp"

using namespace pfrpn;
using namespace pfrpn::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* kTinyConfig = R"({
  "canvas": 32, "channels": 8, "backbone_channels": [4, 4, 8, 8], "queries": 8,
  "objects_max": 3, "train_scenes": 4, "eval_scenes": 3, "epochs": 1,
  "decoder_layers": 1, "ffn_hidden": 8, "budgets": [1, 4, 8]
})";

struct Sandbox {
  fs::path root;
  explicit Sandbox(const std::string& name) : root(fs::temp_directory_path() / ("pfrpn_cli_" + name)) {
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream(root / "c.json") << kTinyConfig;
  }
  ~Sandbox() { fs::remove_all(root); }
  std::string path(const std::string& p) const { return (root / p).string(); }
};

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config parsing rejects unknown keys and wrong types") {
  CHECK_THROWS_WITH_AS(parse_config(R"({"epochz": 3})"), doctest::Contains("epochz"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"epochs": "three"})"), doctest::Contains("epochs"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"learning_rate": -0.1})"), doctest::Contains("learning rate"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"shapes": ["hexagon"]})"), doctest::Contains("hexagon"), ConfigError);
  CHECK_THROWS_AS(parse_config("[1, 2]"), ConfigError);
  CHECK_THROWS_AS(parse_config("{ nope"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"queries": 4, "objects_max": 6})"), doctest::Contains("queries"),
                       ConfigError);
}

TEST_CASE("resolved config round-trips through JSON") {
  RunConfig c = parse_config(kTinyConfig);
  apply_override(c, "optimizer=adam");
  apply_override(c, "lambda=3");
  apply_override(c, "shapes=[\"ellipse\"]");
  CHECK(c.train.optimizer == "adam");
  CHECK(c.train.lambda == 3.0);
  REQUIRE(c.scene.kinds.size() == 1);
  const std::string text = config_json(c);
  CHECK(config_json(parse_config(text)) == text);
  CHECK(json::parse(text).size() == config_keys().size());
  CHECK_THROWS_AS(apply_override(c, "no_equals_sign"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "nothing=1"), ConfigError);
}

TEST_CASE("ablation variants differ only in the swept axis") {
  const RunConfig base = parse_config(kTinyConfig);
  const json b = json::parse(config_json(base));
  const std::map<std::string, std::vector<std::string>> touched = {
      {"k", {"k"}}, {"lambda", {"lambda"}}, {"iterations", {"iterations"}}};
  for (const auto& [axis, keys] : touched) {
    for (const std::string& v : ablation_values(axis)) {
      const json row = json::parse(config_json(ablation_variant(base, axis, v)));
      for (const auto& [key, value] : row.items()) {
        if (key != keys.front()) CHECK_MESSAGE(value == b[key], axis << " changed " << key);
      }
    }
  }
  CHECK(ablation_values("lambda") == std::vector<std::string>{"1", "3", "5", "7", "9"});
  CHECK(ablation_values("k") == std::vector<std::string>{"1", "2", "3", "4"});
  CHECK_FALSE(ablation_variant(base, "modules", "no_sia").model.use_sia);
  CHECK(ablation_variant(base, "modules", "no_csp").model.csp.iterations == 0);
  CHECK_FALSE(ablation_variant(base, "modules", "no_cgqs").model.use_cgqs);
  CHECK_THROWS_AS(ablation_values("depth"), ConfigError);
}

TEST_CASE("gen-data then eval on an untrained model, reproducibly") {
  Sandbox box("eval");
  REQUIRE(invoke({"gen-data", "--config", box.path("c.json"), "--out", box.path("data")}).code == kExitOk);
  CHECK(fs::exists(box.root / "data" / "train" / "manifest.json"));
  CHECK(fs::exists(box.root / "data" / "eval" / "manifest.json"));
  const Outcome a = invoke({"eval", "--config", box.path("c.json"), "--data", box.path("data"), "--out", box.path("e1")});
  const Outcome b = invoke({"eval", "--config", box.path("c.json"), "--data", box.path("data"), "--out", box.path("e2")});
  REQUIRE(a.code == kExitOk);
  REQUIRE(b.code == kExitOk);
  const std::string m1 = slurp(box.root / "e1" / "metrics.json");
  CHECK(m1 == slurp(box.root / "e2" / "metrics.json"));
  const json m = json::parse(m1);
  CHECK(m["images"] == 3);
  REQUIRE(m["recall"].size() == 3);
  double last = -1.0;
  for (const auto& row : m["recall"]) {
    CHECK(row["ar"].get<double>() >= last);
    last = row["ar"].get<double>();
  }
}

TEST_CASE("train writes checkpoints and a loss log; reruns are byte-identical") {
  Sandbox box("train");
  const std::string cfg = box.path("c.json");
  REQUIRE(invoke({"train", "--config", cfg, "--set", "epochs=2", "--out", box.path("r1")}).code == kExitOk);
  REQUIRE(invoke({"train", "--config", cfg, "--set", "epochs=2", "--out", box.path("r2")}).code == kExitOk);
  for (const char* f : {"model.pfrp", "losses.json", "checkpoints/epoch_1.pfrp", "checkpoints/epoch_2.pfrp"}) {
    CHECK(fs::exists(box.root / "r1" / f));
    CHECK(slurp(box.root / "r1" / f) == slurp(box.root / "r2" / f));
  }
  CHECK(json::parse(slurp(box.root / "r1" / "losses.json"))["epochs"].size() == 2);
}

TEST_CASE("propose emits the ranked proposal schema") {
  Sandbox box("propose");
  const Outcome o = invoke({"propose", "--config", box.path("c.json"), "--scene", "000005", "--out", box.path("p")});
  REQUIRE(o.code == kExitOk);
  const json j = json::parse(slurp(box.root / "p" / "proposals_000005.json"));
  CHECK(j["scene"] == "000005");
  REQUIRE(j["proposals"].size() == 8);
  double prev = 2.0;
  for (const auto& p : j["proposals"]) {
    REQUIRE(p["box"].size() == 4);
    CHECK(p["score"].get<double>() <= prev);
    prev = p["score"].get<double>();
    for (const auto& v : p["box"]) {
      CHECK(v.get<double>() >= 0.0);
      CHECK(v.get<double>() <= 1.0);
    }
  }
  CHECK(invoke({"propose", "--config", box.path("c.json"), "--scene", "nope"}).code == kExitConfig);
}

TEST_CASE("ablate lambda emits one row per value over shared data") {
  Sandbox box("ablate");
  const Outcome o = invoke({"ablate", "--config", box.path("c.json"), "--axis", "lambda", "--set", "train_scenes=2",
                            "--set", "eval_scenes=2", "--out", box.path("a")});
  REQUIRE(o.code == kExitOk);
  const json j = json::parse(slurp(box.root / "a" / "ablate_lambda.json"));
  REQUIRE(j["rows"].size() == 5);
  for (const auto& row : j["rows"]) {
    CHECK(row["config"]["data_seed"] == j["rows"][0]["config"]["data_seed"]);
    CHECK(row["config"]["lambda"].get<double>() == std::stod(row["value"].get<std::string>()));
    CHECK(row["metrics"]["recall"].size() == 3);
  }
  CHECK(fs::exists(box.root / "a" / "ablate_lambda.tsv"));
  CHECK(invoke({"ablate", "--config", box.path("c.json"), "--axis", "depth"}).code == kExitConfig);
}

TEST_CASE("heatmap writes maps, masks, overlays and a sidecar") {
  Sandbox box("heatmap");
  REQUIRE(invoke({"heatmap", "--config", box.path("c.json"), "--out", box.path("h")}).code == kExitOk);
  const fs::path h = box.root / "h";
  const std::string id = "000004";  // first evaluation scene
  for (int l = 1; l <= 4; ++l) {
    CHECK(fs::exists(h / (id + "_sia_level" + std::to_string(l) + "_similarity.pgm")));
    CHECK(fs::exists(h / (id + "_csp_iter1_level" + std::to_string(l) + "_mask.pgm")));
  }
  CHECK(fs::exists(h / (id + "_queries.ppm")));
  const json side = json::parse(slurp(h / (id + "_heatmap.json")));
  CHECK(side["queries"].size() == 8);
  CHECK(side["csp_masks"].size() == 12);
  CHECK(side["router"]["selected"].size() == 2);
}

TEST_CASE("exit codes: config errors are 2, runtime errors are 3") {
  Sandbox box("codes");
  const Outcome neg = invoke({"train", "--config", box.path("c.json"), "--set", "learning_rate=-1"});
  CHECK(neg.code == kExitConfig);
  CHECK(neg.err.find("learning rate") != std::string::npos);
  CHECK(invoke({"train", "--config", box.path("missing.json")}).code == kExitConfig);
  CHECK(invoke({"frobnicate"}).code == kExitConfig);
  CHECK(invoke({}).code == kExitConfig);

  std::ofstream(box.root / "bad.pfrp") << "not a checkpoint";
  const Outcome corrupt = invoke({"eval", "--config", box.path("c.json"), "--checkpoint", box.path("bad.pfrp")});
  CHECK(corrupt.code == kExitRuntime);
  CHECK(corrupt.err.find("magic") != std::string::npos);
  const Outcome no_data = invoke({"eval", "--config", box.path("c.json"), "--data", box.path("nowhere")});
  CHECK(no_data.code == kExitRuntime);
  const Outcome nan = invoke({"train", "--config", box.path("c.json"), "--set", "learning_rate=1e300",
                             "--set", "grad_clip=0", "--set", "epochs=3", "--out", box.path("nan")});
  CHECK(nan.code == kExitRuntime);
  CHECK(nan.err.find("non-finite") != std::string::npos);
}
