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

// Acceptance runner. `acceptance` runs every criterion; `acceptance N` runs
// criterion N only. Each prints one PASS/FAIL line with its measurements and
// the exit status is non-zero when any selected criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "micro.hpp"
#include "oracles.hpp"
#include "pfrpn/checkpoint.hpp"
#include "pfrpn/cli.hpp"

using namespace pfrpn;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

// ---------------------------------------------------------------- criterion 1

Verdict formula_suite() {
  Verdict v;
  const auto t0 = Clock::now();
  double worst = 0.0;
  auto near = [&](double got, double want, const std::string& what, double tol = 1e-6) {
    worst = std::max(worst, std::abs(got - want));
    v.require(std::abs(got - want) <= tol, what);
  };

  // centerness: l=1, r=3, t=2, b=2 -> sqrt((1/3) * (2/2)) = sqrt(1/3)
  near(centerness({1.0, 3.0, 2.0, 2.0}), std::sqrt(1.0 / 3.0), "centerness exact");
  near(centerness({1.0, 3.0, 2.0, 2.0}), 0.57735, "centerness printed", 5e-6);
  near(centerness_target({0.1, 0.2}, {0.0, 0.0, 0.4, 0.4}), std::sqrt(1.0 / 3.0), "centerness_target");
  // boxes [0,0,2,2] and [1,1,3,3]: intersection 1, union 7, hull 9
  const BoxXYXY a{0, 0, 2, 2}, b{1, 1, 3, 3};
  near(iou(a, b), 1.0 / 7.0, "iou exact");
  near(iou(a, b), 0.142857, "iou printed", 5e-7);
  near(giou(a, b), 1.0 / 7.0 - 2.0 / 9.0, "giou exact");
  near(giou(a, b), -0.079365, "giou printed", 5e-7);
  // softmax [1, 2, 3] = e^i / (e + e^2 + e^3)
  const std::vector<double> x{1.0, 2.0, 3.0};
  const std::vector<double> s = softmax(x);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  const double printed[] = {0.09003, 0.24473, 0.66524};
  for (std::size_t i = 0; i < 3; ++i) {
    near(s[i], std::exp(x[i]) / z, "softmax exact");
    near(s[i], printed[i], "softmax printed", 5e-6);
  }
  // router balance: [1,0,0,0] has mean 0.25 and population variance 0.1875
  const std::vector<double> w{1.0, 0.0, 0.0, 0.0};
  near(router_balance_loss(w), std::sqrt(0.1875), "router_balance_loss exact");
  near(router_balance_loss(w), 0.43301, "router_balance_loss printed", 5e-6);
  // focal at logit 0, target 1: alpha (1-p)^gamma (-ln p) = 0.25 * 0.25 * ln 2
  near(focal_element(0.0, 1.0, 0.25, 2.0), 0.25 * 0.25 * std::numbers::ln2, "focal exact");
  near(focal_element(0.0, 1.0, 0.25, 2.0), 0.04332, "focal printed", 5e-6);

  const double secs = seconds_since(t0);
  v.require(secs < 1.0, "runtime < 1 s");
  v.detail << "max |error| vs exact " << worst << ", runtime " << secs << " s";
  return v;
}

// ---------------------------------------------------------------- criterion 2

// Reverse-mode gradient of `build` with respect to every tensor in `point`,
// compared against central differences at `count` random coordinates.
// Returns the worst relative error |a - n| / max(1, |a|).
double sampled_gradcheck(std::vector<Tensor> point,
                         const std::function<Var(Graph&, const std::vector<Var>&)>& build, Rng& rng,
                         std::size_t count, std::string* worst_at) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> vars;
    for (const Tensor& t : point) vars.push_back(g.parameter(t));
    g.backward(build(g, vars));
    for (const Var& x : vars) {
      const Tensor& gr = g.grad(x);
      analytic.push_back(gr.size() == 0 ? Tensor(x.value().shape(), 0.0) : gr);
    }
  }
  auto value = [&] {
    Graph g;
    std::vector<Var> vars;
    for (const Tensor& t : point) vars.push_back(g.constant(t));
    return build(g, vars).value()[0];
  };
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t n = 0; n < count; ++n) {
    const auto i = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(point.size()) - 1));
    const auto j = static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(point[i].size()) - 1));
    double& x = point[i].storage()[j];
    const double x0 = x;
    x = x0 + h;
    const double up = value();
    x = x0 - h;
    const double down = value();
    x = x0;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[i][j];
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    if (err > worst) {
      worst = err;
      if (worst_at) *worst_at = "tensor " + std::to_string(i) + " coord " + std::to_string(j);
    }
  }
  return worst;
}

std::vector<LevelFeatures> random_levels(std::size_t c, Rng& rng) {
  std::vector<LevelFeatures> out;
  for (int l = 1; l <= 4; ++l) {
    const std::size_t side = std::size_t{8} >> (l - 1);
    out.push_back({l, side, side, std::size_t{4} << (l - 1), random_normal(side * side, c, 1.0, rng)});
  }
  return out;
}

template <template <typename> class W>
std::vector<Tensor> flatten(const W<Tensor>& params) {
  std::vector<Tensor> out;
  W<Tensor>::each(params, [&](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

template <template <typename> class W>
W<Var> unflatten(std::span<const Var> vars) {
  W<Var> w;
  std::size_t i = 0;
  W<Var>::each(w, [&](const std::string&, Var& v) { v = vars[i++]; });
  return w;
}

Verdict gradient_oracle() {
  Verdict v;
  const auto t0 = Clock::now();
  constexpr std::size_t kSeeds = 5, kCoords = 20;
  double worst[4] = {0, 0, 0, 0};
  std::string where[4];

  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    Rng rng(seed, 0xacc);
    const std::size_t c = 6;
    const auto levels = random_levels(c, rng);

    // (a) adapter: embedding, all adapter weights and level features.
    {
      const SiaParams params = init_sia_params(c, rng);
      const Tensor e = random_normal(1, c, 1.0, rng);
      const Tensor probe = random_normal(1, c, 1.0, rng);
      const RouterOutput frozen = route_and_select(pool_levels(levels), params, 2);
      std::vector<Tensor> point = flatten<SiaWeights>(params);
      const std::size_t np = point.size();
      point.push_back(e);
      for (const auto& lf : levels) point.push_back(lf.grid);
      const std::function<Var(Graph&, const std::vector<Var>&)> build = [&](Graph& g, const std::vector<Var>& x) {
        const SiaVars w = unflatten<SiaWeights>(std::span(x).first(np));
        std::vector<LevelVar> lv;
        for (std::size_t l = 0; l < levels.size(); ++l) {
          lv.push_back({levels[l].level, levels[l].height, levels[l].width, levels[l].stride, x[np + 1 + l]});
        }
        const SiaResult r = sia_forward(x[np], lv, w, 2, &frozen);
        return ad::add(ad::sum(ad::mul(r.refined, g.constant(probe))), router_balance_loss(r.raw));
      };
      std::string at;
      const double err = sampled_gradcheck(point, build, rng, kCoords, &at);
      if (err >= worst[0]) where[0] = "seed " + std::to_string(seed) + " " + at;
      worst[0] = std::max(worst[0], err);
    }
    // (b) cascade: embedding and level features through three sweeps with
    // the masks recorded at the base point.
    {
      CspConfig cfg;
      cfg.delta = 0.1;
      const Tensor e = random_normal(1, c, 1.0, rng);
      const Tensor probe = random_normal(1, c, 1.0, rng);
      const MaskRecord frozen = csp_refine(e, levels, cfg).masks;
      std::vector<Tensor> point{e};
      for (const auto& lf : levels) point.push_back(lf.grid);
      const std::function<Var(Graph&, const std::vector<Var>&)> build = [&](Graph& g, const std::vector<Var>& x) {
        std::vector<LevelVar> lv;
        for (std::size_t l = 0; l < levels.size(); ++l) {
          lv.push_back({levels[l].level, levels[l].height, levels[l].width, levels[l].stride, x[1 + l]});
        }
        Var r = csp_refine(x[0], lv, cfg, nullptr, &frozen);
        return ad::sum(ad::mul(ad::square(r), g.constant(probe)));
      };
      std::string at;
      const double err = sampled_gradcheck(point, build, rng, kCoords, &at);
      if (err >= worst[1]) where[1] = "seed " + std::to_string(seed) + " " + at;
      worst[1] = std::max(worst[1], err);
    }
    // (c) query scoring and the centerness loss: center network, token
    // features and the prompt embedding.
    {
      const CenterNetParams params = init_center_net(c, rng);
      const std::size_t m = 40;
      const Tensor tokens = random_normal(m, c, 1.0, rng);
      const Tensor e = random_normal(1, c, 1.0, rng);
      std::vector<Point> pos;
      for (std::size_t i = 0; i < m; ++i) pos.push_back({rng.uniform(), rng.uniform()});
      const std::vector<BoxXYXY> boxes{{0.1, 0.1, 0.6, 0.7}, {0.4, 0.3, 0.9, 0.95}};
      const CenterTargets targets = center_targets(pos, boxes);
      std::vector<Tensor> point = flatten<CenterNetWeights>(params);
      const std::size_t np = point.size();
      point.push_back(tokens);
      point.push_back(e);
      const std::function<Var(Graph&, const std::vector<Var>&)> build = [&](Graph&, const std::vector<Var>& x) {
        const CenterNetVars w = unflatten<CenterNetWeights>(std::span(x).first(np));
        Var center = ad::sigmoid(center_logits(x[np], w));
        Var cls = ad::sigmoid(classification_logits(x[np], x[np + 1]));
        Var combined = ad::sum(ad::mul(cls, center));
        return ad::add(combined, centerness_loss(center, targets));
      };
      std::string at;
      const double err = sampled_gradcheck(point, build, rng, kCoords, &at);
      if (err >= worst[2]) where[2] = "seed " + std::to_string(seed) + " " + at;
      worst[2] = std::max(worst[2], err);
    }
    // (d) the full objective on the micro configuration.
    {
      const micro::GradCheckSummary s = micro::end_to_end_gradcheck(seed, kCoords);
      if (s.max_error >= worst[3]) where[3] = "seed " + std::to_string(seed) + " " + s.worst;
      worst[3] = std::max(worst[3], s.max_error);
    }
  }
  const char* names[] = {"sia_update", "csp_refine", "cgqs+L_ctr", "end-to-end"};
  for (int i = 0; i < 4; ++i) {
    v.require(worst[i] <= 1e-3, std::string(names[i]) + " worst at " + where[i]);
    v.detail << names[i] << " " << worst[i] << "; ";
  }
  const double secs = seconds_since(t0);
  v.require(secs < 120.0, "runtime < 2 min");
  v.detail << kCoords << " coords x " << kSeeds << " seeds each, runtime " << secs << " s";
  return v;
}

// ---------------------------------------------------------------- criterion 3

Verdict matching_oracle() {
  Verdict v;
  const auto t0 = Clock::now();
  Rng rng(3, 0x3a7);
  std::size_t agree = 0, invariant = 0;
  double worst_gap = 0.0;
  const std::size_t trials = 1000;
  for (std::size_t t = 0; t < trials; ++t) {
    const auto g = static_cast<std::size_t>(rng.integer(1, 6));
    const auto p = static_cast<std::size_t>(rng.integer(static_cast<std::int64_t>(g), 8));
    std::vector<double> cost(p * g);
    for (double& c : cost) c = rng.uniform(-2.0, 5.0);
    const Tensor m = Tensor::matrix(p, g, cost);
    const MatchResult r = hungarian_match(m);
    double best = 0.0;
    const auto brute = oracle::brute_force_assignment(cost, p, g, &best);
    double total = 0.0;
    bool same = r.pairs.size() == g;
    for (const auto& [pred, gt] : r.pairs) {
      total += cost[pred * g + gt];
      same = same && brute[gt] == pred;
    }
    worst_gap = std::max(worst_gap, std::abs(total - best));
    if (same && std::abs(total - best) <= 1e-9) ++agree;

    bool stable = true;
    for (double s : {1e-3, 0.37, 12.5, 4e4}) {
      Tensor scaled = m;
      for (double& c : scaled.storage()) c *= s;
      stable = stable && hungarian_match(scaled).pairs == r.pairs;
    }
    invariant += stable ? 1 : 0;
  }
  const double secs = seconds_since(t0);
  v.require(agree == trials, "agreement with exhaustive search");
  v.require(invariant == trials, "scaling invariance");
  v.require(secs < 30.0, "runtime < 30 s");
  v.detail << agree << "/" << trials << " agree (max cost gap " << worst_gap << "), " << invariant << "/" << trials
           << " scale-invariant, runtime " << secs << " s";
  return v;
}

// ---------------------------------------------------------------- criterion 4

Verdict recall_oracle() {
  Verdict v;
  const auto t0 = Clock::now();
  Rng rng(4, 0xa7);
  const std::size_t trials = 500;
  double worst = 0.0;
  std::size_t monotone = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const oracle::RecallInstance inst = oracle::random_recall_instance(rng);
    const std::vector<std::vector<BoxXYXY>> props{inst.proposals}, gt{inst.gt};
    bool ok = true;
    double prev = -1.0;
    for (std::size_t k = 1; k <= 8; ++k) {
      const double ar = average_recall(props, gt, k).ar;
      worst = std::max(worst, std::abs(ar - oracle::brute_force_ar(inst.proposals, inst.gt, k)));
      ok = ok && ar >= prev;
      prev = ar;
      double last = 2.0;
      for (int i = 0; i < 10; ++i) {
        const double r = recall_at(props, gt, k, (50.0 + 5.0 * i) / 100.0);
        ok = ok && r <= last;
        last = r;
      }
    }
    monotone += ok ? 1 : 0;
  }
  const double secs = seconds_since(t0);
  v.require(worst <= 1e-9, "agreement within 1e-9");
  v.require(monotone == trials, "monotone in K and antitone in tau");
  v.require(secs < 30.0, "runtime < 30 s");
  v.detail << "max |AR - brute force| " << worst << " over " << trials << " instances, " << monotone << "/" << trials
           << " monotone, runtime " << secs << " s";
  return v;
}

// ---------------------------------------------------------------- criterion 5

double plain_cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

// Brute-force search over small random two-cluster sets: cluster A lies
// along the embedding, cluster B is only reachable once the state has moved
// towards A. Candidates are judged by direct evaluation.
bool two_cluster_fixture(double delta, LevelFeatures& level, Tensor& embedding) {
  Rng rng(2024, 5);
  const std::size_t c = 3, na = 2, nb = 2;
  for (int attempt = 0; attempt < 50000; ++attempt) {
    std::vector<double> e(c), a(c), b(c);
    for (auto& x : e) x = rng.normal();
    for (std::size_t i = 0; i < c; ++i) a[i] = e[i] + 0.3 * rng.normal();
    for (auto& x : b) x = rng.normal();
    Tensor grid = Tensor::matrix(na + nb, c);
    for (std::size_t r = 0; r < na + nb; ++r) {
      for (std::size_t i = 0; i < c; ++i) grid.at(r, i) = (r < na ? a : b)[i] + 0.05 * rng.normal();
    }
    std::vector<double> mean_a(c, 0.0);
    bool ok = true;
    for (std::size_t r = 0; r < na + nb; ++r) {
      const bool hit = plain_cosine(e, grid.row_span(r)) > delta;
      ok = ok && hit == (r < na);
      if (r < na) {
        for (std::size_t i = 0; i < c; ++i) mean_a[i] += grid.at(r, i) / na;
      }
    }
    if (!ok) continue;
    std::vector<double> state(c);
    for (std::size_t i = 0; i < c; ++i) state[i] = e[i] + mean_a[i];
    std::size_t count2 = 0;
    for (std::size_t r = 0; r < na + nb; ++r) count2 += plain_cosine(state, grid.row_span(r)) > delta;
    if (count2 <= na) continue;
    level = {1, 2, 2, 4, grid};
    embedding = Tensor::row(e);
    return true;
  }
  return false;
}

Verdict csp_behavior() {
  Verdict v;
  Rng rng(5);
  const auto levels = random_levels(5, rng);
  const Tensor e = random_normal(1, 5, 1.0, rng);
  CspConfig zero;
  zero.iterations = 0;
  const CspResult id = csp_refine(e, levels, zero);
  v.require(id.refined == e && id.masks.empty(), "iterations=0 is the identity");

  CspConfig cfg;
  cfg.iterations = 2;
  cfg.level_order = {1};
  LevelFeatures level;
  Tensor emb;
  const bool found = two_cluster_fixture(cfg.delta, level, emb);
  v.require(found, "two-cluster fixture found");
  if (found) {
    const std::vector<LevelFeatures> one{level};
    const CspResult r = csp_refine(emb, one, cfg);
    v.require(r.masks.size() == 2, "two sweeps recorded");
    if (r.masks.size() == 2) {
      v.require(r.masks[1].activated > r.masks[0].activated, "activated count increases");
      v.detail << "activated cells: iteration 1 = " << r.masks[0].activated
               << ", iteration 2 = " << r.masks[1].activated << "; ";
    }
  }
  v.detail << "iterations=0 identity " << (id.refined == e ? "exact" : "broken");
  return v;
}

// ---------------------------------------------------- criteria 6 and 7 shared

SceneConfig default_scenes() {
  SceneConfig sc;
  sc.seed = 0;
  return sc;
}

// Adam with one tenfold learning-rate drop after three quarters of training.
TrainConfig acceptance_training() {
  TrainConfig tc;
  tc.seed = 0;
  tc.optimizer = "adam";
  tc.learning_rate = 1e-3;
  tc.epochs = 100;
  tc.lr_drop_epoch = 75;
  return tc;
}

double ar10(const Model& model, std::span<const Scene> scenes) {
  const std::size_t budgets[] = {10};
  return evaluate(model, scenes, budgets).recall[0].ar;
}

Verdict end_to_end_training() {
  Verdict v;
  const auto t0 = Clock::now();
  const SceneConfig sc = default_scenes();
  const auto train_set = generate_scenes(sc, 0, 500);
  const auto test_set = generate_scenes(sc, 500, 100);
  const ModelConfig mc;
  const TrainConfig tc = acceptance_training();
  Model model(mc, tc.seed);
  const double before = ar10(model, test_set);
  TrainOptions opts;
  opts.on_epoch = [&](const EpochLog& e) {
    std::cerr << "  epoch " << e.epoch << " total " << e.mean.total << " (" << seconds_since(t0) << " s)\n";
  };
  train(model, train_set, tc, opts);
  const double after = ar10(model, test_set);
  const double secs = seconds_since(t0);
  v.require(after >= 3.0 * before, "trained AR@10 >= 3x untrained");
  v.require(after >= 0.5, "trained AR@10 >= 0.5");
  v.require(secs < 1800.0, "runtime < 30 min");
  v.detail << "untrained AR@10 " << before << ", trained AR@10 " << after << ", " << tc.epochs << " epochs, runtime "
           << secs << " s";
  return v;
}

Verdict module_ablation() {
  Verdict v;
  const auto t0 = Clock::now();
  const SceneConfig sc = default_scenes();
  const auto train_set = generate_scenes(sc, 0, 500);
  const auto test_set = generate_scenes(sc, 500, 100);
  const TrainConfig tc = acceptance_training();
  double full = 0.0;
  for (const char* variant : {"full", "no_sia", "no_csp", "no_cgqs"}) {
    cli::RunConfig rc;
    rc.train = tc;
    const cli::RunConfig c = cli::ablation_variant(rc, "modules", variant);
    Model model(c.model, tc.seed);
    train(model, train_set, c.train);
    const double ar = ar10(model, test_set);
    std::cerr << "  " << variant << " AR@10 " << ar << " (" << seconds_since(t0) << " s)\n";
    if (std::string(variant) == "full") {
      full = ar;
    } else {
      v.require(full >= ar - 0.03, std::string("full >= ") + variant + " - 0.03");
    }
    v.detail << variant << " " << ar << "; ";
  }
  v.detail << "runtime " << seconds_since(t0) << " s";
  return v;
}

// ---------------------------------------------------------- criteria 8 and 9

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("pfrpn_accept_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int cli_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::cerr << "  cli error: " << err.str();
  return code;
}

// Small sweep settings: full model, fewer scenes and epochs.
std::vector<std::string> sweep_overrides() {
  return {"--set", "train_scenes=16", "--set", "eval_scenes=8", "--set", "epochs=2"};
}

Verdict sweep_tables() {
  Verdict v;
  const auto t0 = Clock::now();
  TempDir dir("sweeps");
  for (const std::string axis : {"lambda", "k"}) {
    std::string first_text;
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = dir.path / axis;  // same command line both times
      std::vector<std::string> args{"ablate", "--axis", axis, "--out", out.string()};
      for (const auto& s : sweep_overrides()) args.push_back(s);
      v.require(cli_run(args) == 0, "ablate " + axis + " exit 0");
      const std::string text = slurp(out / ("ablate_" + axis + ".json"));
      if (rep == 0) {
        first_text = text;
        const json j = json::parse(text.empty() ? "{}" : text);
        const auto expected = cli::ablation_values(axis);
        bool complete = j.contains("rows") && j["rows"].size() == expected.size();
        for (std::size_t i = 0; complete && i < expected.size(); ++i) {
          const json& row = j["rows"][i];
          complete = row["value"] == expected[i] && row["metrics"]["recall"].size() == 3 &&
                     row["config"]["data_seed"] == j["rows"][0]["config"]["data_seed"];
        }
        v.require(complete, axis + " table complete");
        v.detail << axis << " rows " << (j.contains("rows") ? j["rows"].size() : 0) << "; ";
      } else {
        v.require(text == first_text, axis + " table deterministic");
      }
    }
  }
  v.detail << "runtime " << seconds_since(t0) << " s";
  return v;
}

Verdict determinism_and_persistence() {
  Verdict v;
  TempDir dir("determinism");
  std::string metrics[2];
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path run = dir.path / ("run" + std::to_string(rep));
    std::vector<std::string> train_args{"train", "--out", run.string()};
    for (const auto& s : sweep_overrides()) train_args.push_back(s);
    v.require(cli_run(train_args) == 0, "train exit 0");
    std::vector<std::string> eval_args{"eval", "--checkpoint", (run / "model.pfrp").string(), "--out", run.string()};
    for (const auto& s : sweep_overrides()) eval_args.push_back(s);
    v.require(cli_run(eval_args) == 0, "eval exit 0");
    metrics[rep] = slurp(run / "metrics.json");
  }
  v.require(!metrics[0].empty() && metrics[0] == metrics[1], "metric JSON bit-identical across runs");

  // save -> load -> forward preserves outputs exactly; save -> load -> save is byte-identical
  const fs::path ckpt = dir.path / "run0" / "model.pfrp";
  const ModelConfig mc;
  Model trained(mc, load_checkpoint(ckpt, mc));
  const fs::path again = dir.path / "again.pfrp";
  save_checkpoint(trained.params(), again);
  v.require(slurp(ckpt) == slurp(again), "save-load-save byte-identical");
  const Model reloaded(mc, load_checkpoint(again, mc));
  bool same = true;
  for (const Scene& s : generate_scenes(default_scenes(), 900, 5)) {
    const auto a = forward(trained, s.image), b = forward(reloaded, s.image);
    same = same && a.proposals.size() == b.proposals.size();
    for (std::size_t i = 0; same && i < a.proposals.size(); ++i) {
      same = a.proposals[i].box == b.proposals[i].box && a.proposals[i].score == b.proposals[i].score;
    }
  }
  v.require(same, "forward outputs preserved exactly");
  v.detail << "metrics identical " << (metrics[0] == metrics[1] ? "yes" : "no") << ", reload forward identical "
           << (same ? "yes" : "no");
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"formula unit suite", formula_suite},
      {"gradient oracle", gradient_oracle},
      {"matching oracle", matching_oracle},
      {"AR oracle", recall_oracle},
      {"CSP behavior", csp_behavior},
      {"end-to-end synthetic training", end_to_end_training},
      {"module ablation direction", module_ablation},
      {"lambda and k sweeps", sweep_tables},
      {"determinism and persistence", determinism_and_persistence},
  };
  std::vector<std::size_t> selected;
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (n < 1 || n > static_cast<int>(criteria.size())) {
      std::cerr << "unknown criterion '" << argv[i] << "'\n";
      return 2;
    }
    selected.push_back(static_cast<std::size_t>(n));
  }
  if (selected.empty()) {
    for (std::size_t i = 1; i <= criteria.size(); ++i) selected.push_back(i);
  }
  bool all = true;
  for (std::size_t n : selected) {
    Verdict v;
    try {
      v = criteria[n - 1].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "exception: " << e.what();
    }
    all = all && v.pass;
    std::cout << "criterion " << n << " (" << criteria[n - 1].first << "): " << (v.pass ? "PASS" : "FAIL") << " - "
              << v.detail.str() << std::endl;
  }
  return all ? 0 : 1;
}
