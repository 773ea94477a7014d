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
#include "pfrpn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace pfrpn {

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine_similarity: length mismatch");
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  const double c = dot / ((std::sqrt(na) + kCosineEps) * (std::sqrt(nb) + kCosineEps));
  return std::clamp(c, -1.0, 1.0);
}

Tensor scaled_dot_attention(const Tensor& query, const Tensor& keys, const Tensor& values) {
  const std::size_t c = query.cols();
  if (query.rows() != 1) throw std::invalid_argument("attention: query must be 1 x C");
  if (keys.rows() == 0) throw std::invalid_argument("attention: no keys (M = 0)");
  if (keys.cols() != c || keys.rows() != values.rows()) {
    throw std::invalid_argument("attention: inconsistent key/value shapes");
  }
  const double inv_sqrt_c = 1.0 / std::sqrt(static_cast<double>(c));
  std::vector<double> logits(keys.rows());
  for (std::size_t m = 0; m < keys.rows(); ++m) {
    double dot = 0.0;
    for (std::size_t j = 0; j < c; ++j) dot += query[j] * keys.at(m, j);
    logits[m] = dot * inv_sqrt_c;
  }
  const std::vector<double> w = softmax(logits);
  Tensor out = Tensor::matrix(1, values.cols());
  for (std::size_t m = 0; m < values.rows(); ++m) {
    for (std::size_t j = 0; j < values.cols(); ++j) out[j] += w[m] * values.at(m, j);
  }
  return out;
}

std::vector<std::size_t> topk_indices(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw std::invalid_argument("topk_indices: k=" + std::to_string(k) +
                                " outside [1, " + std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<long>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (scores[a] != scores[b]) return scores[a] > scores[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

double relative_gradient_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
}

double central_difference(const std::function<double()>& eval, double& coordinate,
                          double h, std::size_t coordinate_index) {
  const double saved = coordinate;
  coordinate = saved + h;
  const double plus = eval();
  coordinate = saved - h;
  const double minus = eval();
  coordinate = saved;
  if (!std::isfinite(plus) || !std::isfinite(minus)) {
    throw std::runtime_error("finite difference: non-finite evaluation at coordinate " +
                             std::to_string(coordinate_index));
  }
  return (plus - minus) / (2.0 * h);
}

GradCheckResult finite_difference_check(const std::function<Var(Graph&, Var)>& f,
                                        const Tensor& point, double h,
                                        std::span<const std::size_t> coordinates) {
  Tensor analytic;
  {
    Graph g;
    Var x = g.parameter(point);
    Var y = f(g, x);
    if (!std::isfinite(y.value()[0])) {
      throw std::runtime_error("finite difference: non-finite value at the base point");
    }
    g.backward(y);
    analytic = x.grad().empty() ? Tensor(point.shape(), 0.0) : x.grad();
  }

  Tensor probe = point;
  auto eval = [&]() {
    Graph g;
    Var x = g.constant(probe);
    return f(g, x).value()[0];
  };

  std::vector<std::size_t> all;
  if (coordinates.empty()) {
    all.resize(point.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    coordinates = all;
  }

  GradCheckResult result;
  for (std::size_t i : coordinates) {
    if (i >= point.size()) throw std::invalid_argument("finite difference: coordinate out of range");
    const double numeric = central_difference(eval, probe[i], h, i);
    const double err = relative_gradient_error(analytic[i], numeric);
    if (err >= result.max_error) {
      result = {err, i, analytic[i], numeric};
    }
  }
  return result;
}

}  // namespace pfrpn
