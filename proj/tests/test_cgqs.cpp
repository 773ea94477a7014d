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
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "pfrpn/cgqs.hpp"
#include "pfrpn/numerics.hpp"

using namespace pfrpn;

namespace {

struct Tokens {
  Tensor features;
  std::vector<Point> positions;
  std::vector<int> levels;
};

Tokens random_tokens(std::size_t m, std::size_t c, Rng& rng) {
  Tokens t{random_normal(m, c, 1.0, rng), {}, {}};
  for (std::size_t i = 0; i < m; ++i) {
    t.positions.push_back({rng.uniform(), rng.uniform()});
    t.levels.push_back(static_cast<int>(1 + i % 4));
  }
  return t;
}

}  // namespace

TEST_CASE("scores match a hand-set two-channel network") {
  CenterNetParams p;
  p.w1 = Tensor::matrix(2, 2, {1.0, -1.0, 0.5, 2.0});
  p.b1 = Tensor::row({0.1, -0.2});
  p.w2 = Tensor::matrix(2, 1, {0.7, -0.3});
  p.b2 = Tensor::scalar(0.05);
  const Tensor tokens = Tensor::matrix(3, 2, {1.0, 2.0, -1.0, 0.5, 0.0, 0.0});
  const Tensor emb = Tensor::row({0.4, -0.8});
  const std::vector<Point> pos{{0.1, 0.1}, {0.5, 0.5}, {0.9, 0.2}};
  const std::vector<int> lv{1, 2, 3};
  const auto scored = score_queries(tokens, pos, lv, emb, p);
  for (std::size_t i = 0; i < 3; ++i) {
    const double x0 = tokens.at(i, 0), x1 = tokens.at(i, 1);
    const double h0 = std::max(0.0, x0 * 1.0 + x1 * 0.5 + 0.1);
    const double h1 = std::max(0.0, x0 * -1.0 + x1 * 2.0 - 0.2);
    const double center = 1.0 / (1.0 + std::exp(-(0.7 * h0 - 0.3 * h1 + 0.05)));
    const double cls = 1.0 / (1.0 + std::exp(-(0.4 * x0 - 0.8 * x1)));
    CHECK(std::abs(scored[i].center_score - center) < 1e-12);
    CHECK(std::abs(scored[i].cls_score - cls) < 1e-12);
    CHECK(scored[i].combined == scored[i].cls_score * scored[i].center_score);
    CHECK(scored[i].level == lv[i]);
    CHECK(scored[i].index == i);
  }
  // the zero token has logit 0
  CHECK(scored[2].cls_score == 0.5);
}

TEST_CASE("orthogonal token gives a neutral class score") {
  Rng rng(1);
  const CenterNetParams p = init_center_net(2, rng);
  const auto scored = score_queries(Tensor::matrix(1, 2, {2.0, 1.0}), std::vector<Point>{{0.5, 0.5}},
                                    std::vector<int>{1}, Tensor::row({-1.0, 2.0}), p);
  CHECK(scored[0].cls_score == 0.5);
}

TEST_CASE("combined score never exceeds either factor") {
  Rng rng(2);
  const CenterNetParams p = init_center_net(8, rng);
  const Tokens t = random_tokens(200, 8, rng);
  const auto scored = score_queries(t.features, t.positions, t.levels, random_normal(1, 8, 1.0, rng), p);
  for (const auto& q : scored) {
    CHECK(q.combined <= std::min(q.cls_score, q.center_score));
    CHECK(q.center_score > 0.0);
    CHECK(q.center_score < 1.0);
  }
}

TEST_CASE("top-N selection") {
  const std::vector<double> s{0.9, 0.1, 0.5};
  CHECK(select_top(s, 2) == std::vector<std::size_t>{0, 2});
  CHECK(select_top(s, 10) == std::vector<std::size_t>{0, 2, 1});
  CHECK(select_top(std::vector<double>{0.3, 0.7, 0.3, 0.7}, 3) == std::vector<std::size_t>{1, 3, 0});

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = static_cast<std::size_t>(rng.integer(1, 60));
    const std::size_t n = static_cast<std::size_t>(rng.integer(1, 40));
    std::vector<QueryToken> scored(m);
    std::vector<double> plain(m), transformed(m);
    for (std::size_t i = 0; i < m; ++i) {
      scored[i].index = i;
      scored[i].combined = std::round(rng.uniform() * 20) / 20;  // ties
      plain[i] = scored[i].combined;
      transformed[i] = std::exp(3.0 * plain[i]) - 7.0;  // strictly increasing
    }
    const auto picked = select_queries(scored, n);
    CHECK(picked.size() == std::min(n, m));
    std::vector<char> chosen(m, 0);
    for (const auto& q : picked) chosen[q.index] = 1;
    for (const auto& q : picked) {
      for (std::size_t i = 0; i < m; ++i) {
        if (!chosen[i]) CHECK(q.combined >= plain[i]);
      }
    }
    for (std::size_t j = 1; j < picked.size(); ++j) CHECK(picked[j - 1].combined >= picked[j].combined);
    CHECK(select_top(transformed, n) == select_top(plain, n));
  }
  CHECK_THROWS(select_queries(std::vector<QueryToken>(3), 0));
}

TEST_CASE("centerness loss values") {
  CHECK(centerness_loss(std::vector<double>{0.5}, std::vector<double>{1.0}, std::vector<std::size_t>{0}) == 0.5);
  CHECK(centerness_loss(std::vector<double>{0.2, 0.9}, std::vector<double>{0.2, 0.9},
                        std::vector<std::size_t>{0, 1}) == 0.0);
  CHECK(centerness_loss(std::vector<double>{0.2, 0.9}, std::vector<double>{0.0, 0.0}, {}) == 0.0);
  // only positives count, averaged
  CHECK(centerness_loss(std::vector<double>{0.2, 0.9, 0.4}, std::vector<double>{0.0, 0.0, 1.0},
                        std::vector<std::size_t>{0, 2}) == doctest::Approx(0.4));
}

TEST_CASE("centerness targets use the smallest enclosing box") {
  const std::vector<BoxXYXY> boxes{{0.0, 0.0, 0.8, 0.8}, {0.2, 0.2, 0.4, 0.4}};
  const std::vector<Point> pts{{0.3, 0.3}, {0.6, 0.6}, {0.9, 0.9}};
  const CenterTargets t = center_targets(pts, boxes);
  CHECK(t.box_of == std::vector<int>{1, 0, -1});
  CHECK(t.positives == std::vector<std::size_t>{0, 1});
  CHECK(t.targets[0] == doctest::Approx(1.0));
  CHECK(t.targets[1] == doctest::Approx(std::sqrt(0.2 / 0.6 * 0.2 / 0.6)));
  CHECK(t.targets[2] == 0.0);
}

TEST_CASE("differentiable centerness loss agrees and passes finite differences") {
  Rng rng(7);
  const std::size_t c = 5;
  const CenterNetParams params = init_center_net(c, rng);
  const Tokens tok = random_tokens(40, c, rng);
  const std::vector<BoxXYXY> boxes{{0.1, 0.1, 0.6, 0.7}, {0.4, 0.3, 0.9, 0.95}};
  const CenterTargets targets = center_targets(tok.positions, boxes);
  REQUIRE(!targets.positives.empty());

  Graph g;
  const CenterNetVars vars = bind_weights<CenterNetWeights>(g, params, true);
  Var pred = ad::sigmoid(center_logits(g.constant(tok.features), vars));
  const double l = centerness_loss(pred, targets).value()[0];
  std::vector<double> pv(pred.value().values().begin(), pred.value().values().end());
  CHECK(std::abs(l - centerness_loss(pv, targets.targets, targets.positives)) < 1e-14);

  std::size_t member = 0;
  CenterNetParams::each(params, [&](const std::string& name, const Tensor& t) {
    const std::size_t which = member++;
    auto r = finite_difference_check(
        [&](Graph& gr, Var x) {
          CenterNetVars v = bind_weights<CenterNetWeights>(gr, params, false);
          std::size_t i = 0;
          CenterNetVars::each(v, [&](const std::string&, Var& slot) {
            if (i++ == which) slot = x;
          });
          return centerness_loss(ad::sigmoid(center_logits(gr.constant(tok.features), v)), targets);
        },
        t);
    INFO(name);
    CHECK(r.max_error < 1e-3);
  });

  auto r = finite_difference_check(
      [&](Graph& gr, Var x) {
        return ad::sum(ad::sigmoid(classification_logits(gr.constant(tok.features), x)));
      },
      random_normal(1, c, 1.0, rng));
  CHECK(r.max_error < 1e-3);
}
