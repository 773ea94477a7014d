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
#include "pfrpn/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace pfrpn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

ConstMapMat as_mat(const Tensor& t) {
  return ConstMapMat(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}
MapMat as_mat(Tensor& t) {
  return MapMat(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.same_shape(b), op,
          "shape mismatch " + a.shape_string() + " vs " + b.shape_string());
}

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw std::invalid_argument("ad: invalid Var");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw std::invalid_argument("ad: operands belong to different graphs");
  }
  return *a.graph;
}

template <typename F>
Var unary(Var a, F f, std::function<double(double x, double y)> dydx) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const bool ng = g.needs_grad(a);
  Tensor y_copy = ng ? y : Tensor();
  return g.record(std::move(y), ng,
                  [a, y = std::move(y_copy), dydx](Graph& gr, const Tensor& dy) {
                    Tensor& ga = gr.grad_buffer(a);
                    const Tensor& x = gr.value(a);
                    for (std::size_t i = 0; i < dy.size(); ++i) {
                      ga[i] += dy[i] * dydx(x[i], y[i]);
                    }
                  });
}

}  // namespace

const Tensor& Var::value() const { return graph->value(*this); }
const Tensor& Var::grad() const { return graph->grad(*this); }

Var Graph::constant(Tensor value) { return record(std::move(value), false, nullptr); }

Var Graph::parameter(Tensor value) { return record(std::move(value), true, nullptr); }

Var Graph::record(Tensor value, bool needs_grad, Adjoint adjoint) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.adjoint = std::move(adjoint);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Graph::grad(Var v) const {
  return nodes_[v.id].grad;
}

Tensor& Graph::grad_buffer(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (value(loss).size() != 1) {
    throw std::invalid_argument("backward: loss must be a 1x1 tensor");
  }
  if (!needs_grad(loss)) return;
  grad_buffer(loss)[0] += 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || !n.adjoint || n.grad.empty()) continue;
    n.adjoint(*this, n.grad);
  }
}

namespace ad {

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.cols() == B.rows(), "matmul",
          "inner dims " + A.shape_string() + " x " + B.shape_string());
  Tensor C = Tensor::matrix(A.rows(), B.cols());
  as_mat(C).noalias() = as_mat(A) * as_mat(B);
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  return g.record(std::move(C), ng, [a, b](Graph& gr, const Tensor& dC) {
    if (gr.needs_grad(a)) {
      as_mat(gr.grad_buffer(a)).noalias() += as_mat(dC) * as_mat(gr.value(b)).transpose();
    }
    if (gr.needs_grad(b)) {
      as_mat(gr.grad_buffer(b)).noalias() += as_mat(gr.value(a)).transpose() * as_mat(dC);
    }
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.cols() == B.cols(), "matmul_nt",
          "inner dims " + A.shape_string() + " x " + B.shape_string() + "^T");
  Tensor C = Tensor::matrix(A.rows(), B.rows());
  as_mat(C).noalias() = as_mat(A) * as_mat(B).transpose();
  const bool ng = g.needs_grad(a) || g.needs_grad(b);
  return g.record(std::move(C), ng, [a, b](Graph& gr, const Tensor& dC) {
    if (gr.needs_grad(a)) {
      as_mat(gr.grad_buffer(a)).noalias() += as_mat(dC) * as_mat(gr.value(b));
    }
    if (gr.needs_grad(b)) {
      as_mat(gr.grad_buffer(b)).noalias() += as_mat(dC).transpose() * as_mat(gr.value(a));
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same(a.value(), b.value(), "add");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return g.record(std::move(y), g.needs_grad(a) || g.needs_grad(b),
                  [a, b](Graph& gr, const Tensor& dy) {
                    for (Var v : {a, b}) {
                      if (!gr.needs_grad(v)) continue;
                      Tensor& gv = gr.grad_buffer(v);
                      for (std::size_t i = 0; i < dy.size(); ++i) gv[i] += dy[i];
                    }
                  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same(a.value(), b.value(), "sub");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  return g.record(std::move(y), g.needs_grad(a) || g.needs_grad(b),
                  [a, b](Graph& gr, const Tensor& dy) {
                    if (gr.needs_grad(a)) {
                      Tensor& ga = gr.grad_buffer(a);
                      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
                    }
                    if (gr.needs_grad(b)) {
                      Tensor& gb = gr.grad_buffer(b);
                      for (std::size_t i = 0; i < dy.size(); ++i) gb[i] -= dy[i];
                    }
                  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same(a.value(), b.value(), "mul");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return g.record(std::move(y), g.needs_grad(a) || g.needs_grad(b),
                  [a, b](Graph& gr, const Tensor& dy) {
                    const Tensor& av = gr.value(a);
                    const Tensor& bv = gr.value(b);
                    if (gr.needs_grad(a)) {
                      Tensor& ga = gr.grad_buffer(a);
                      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * bv[i];
                    }
                    if (gr.needs_grad(b)) {
                      Tensor& gb = gr.grad_buffer(b);
                      for (std::size_t i = 0; i < dy.size(); ++i) gb[i] += dy[i] * av[i];
                    }
                  });
}

Var div(Var a, Var b) {
  Graph& g = graph_of(a, b);
  require_same(a.value(), b.value(), "div");
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] /= b.value()[i];
  return g.record(std::move(y), g.needs_grad(a) || g.needs_grad(b),
                  [a, b](Graph& gr, const Tensor& dy) {
                    const Tensor& av = gr.value(a);
                    const Tensor& bv = gr.value(b);
                    if (gr.needs_grad(a)) {
                      Tensor& ga = gr.grad_buffer(a);
                      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] / bv[i];
                    }
                    if (gr.needs_grad(b)) {
                      Tensor& gb = gr.grad_buffer(b);
                      for (std::size_t i = 0; i < dy.size(); ++i) {
                        gb[i] -= dy[i] * av[i] / (bv[i] * bv[i]);
                      }
                    }
                  });
}

namespace {
// Ties route the gradient to the first operand.
Var select_binary(Var a, Var b, bool take_min, const char* name) {
  Graph& g = graph_of(a, b);
  require_same(a.value(), b.value(), name);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const bool pick_a = take_min ? av[i] <= bv[i] : av[i] >= bv[i];
    y[i] = pick_a ? av[i] : bv[i];
  }
  return g.record(std::move(y), g.needs_grad(a) || g.needs_grad(b),
                  [a, b, take_min](Graph& gr, const Tensor& dy) {
                    const Tensor& av = gr.value(a);
                    const Tensor& bv = gr.value(b);
                    for (std::size_t i = 0; i < dy.size(); ++i) {
                      const bool pick_a = take_min ? av[i] <= bv[i] : av[i] >= bv[i];
                      Var target = pick_a ? a : b;
                      if (gr.needs_grad(target)) gr.grad_buffer(target)[i] += dy[i];
                    }
                  });
}
}  // namespace

Var minimum(Var a, Var b) { return select_binary(a, b, true, "minimum"); }
Var maximum(Var a, Var b) { return select_binary(a, b, false, "maximum"); }

Var add_row(Var a, Var row) {
  Graph& g = graph_of(a, row);
  const Tensor& A = a.value();
  const Tensor& r = row.value();
  require(r.rows() == 1 && r.cols() == A.cols(), "add_row",
          "row " + r.shape_string() + " vs " + A.shape_string());
  Tensor y = A;
  const std::size_t n = A.cols();
  for (std::size_t i = 0; i < A.rows(); ++i) {
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] += r[j];
  }
  return g.record(std::move(y), g.needs_grad(a) || g.needs_grad(row),
                  [a, row](Graph& gr, const Tensor& dy) {
                    const std::size_t n = gr.value(row).cols();
                    const std::size_t m = dy.size() / n;
                    if (gr.needs_grad(a)) {
                      Tensor& ga = gr.grad_buffer(a);
                      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
                    }
                    if (gr.needs_grad(row)) {
                      Tensor& gr_row = gr.grad_buffer(row);
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) gr_row[j] += dy[i * n + j];
                      }
                    }
                  });
}

Var mul_row(Var a, Var row) {
  Graph& g = graph_of(a, row);
  const Tensor& A = a.value();
  const Tensor& r = row.value();
  require(r.rows() == 1 && r.cols() == A.cols(), "mul_row",
          "row " + r.shape_string() + " vs " + A.shape_string());
  Tensor y = A;
  const std::size_t n = A.cols();
  for (std::size_t i = 0; i < A.rows(); ++i) {
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] *= r[j];
  }
  return g.record(std::move(y), g.needs_grad(a) || g.needs_grad(row),
                  [a, row](Graph& gr, const Tensor& dy) {
                    const Tensor& av = gr.value(a);
                    const Tensor& rv = gr.value(row);
                    const std::size_t n = rv.cols();
                    const std::size_t m = dy.size() / n;
                    if (gr.needs_grad(a)) {
                      Tensor& ga = gr.grad_buffer(a);
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += dy[i * n + j] * rv[j];
                      }
                    }
                    if (gr.needs_grad(row)) {
                      Tensor& gr_row = gr.grad_buffer(row);
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) {
                          gr_row[j] += dy[i * n + j] * av[i * n + j];
                        }
                      }
                    }
                  });
}

Var scale_by(Var s, Var a) {
  Graph& g = graph_of(s, a);
  require(s.value().size() == 1, "scale_by", "scale must be 1x1");
  const double k = s.value()[0];
  Tensor y = a.value();
  for (double& v : y.storage()) v *= k;
  return g.record(std::move(y), g.needs_grad(s) || g.needs_grad(a),
                  [s, a](Graph& gr, const Tensor& dy) {
                    const Tensor& av = gr.value(a);
                    if (gr.needs_grad(a)) {
                      const double k = gr.value(s)[0];
                      Tensor& ga = gr.grad_buffer(a);
                      for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * k;
                    }
                    if (gr.needs_grad(s)) {
                      double acc = 0.0;
                      for (std::size_t i = 0; i < dy.size(); ++i) acc += dy[i] * av[i];
                      gr.grad_buffer(s)[0] += acc;
                    }
                  });
}

Var scale(Var a, double factor) {
  Graph& g = graph_of(a);
  Tensor y = a.value();
  for (double& v : y.storage()) v *= factor;
  return g.record(std::move(y), g.needs_grad(a), [a, factor](Graph& gr, const Tensor& dy) {
    Tensor& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i] * factor;
  });
}

Var add_scalar(Var a, double offset) {
  Graph& g = graph_of(a);
  Tensor y = a.value();
  for (double& v : y.storage()) v += offset;
  return g.record(std::move(y), g.needs_grad(a), [a](Graph& gr, const Tensor& dy) {
    Tensor& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
  });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var abs(Var a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softmax_rows(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  require(n > 0, "softmax_rows", "empty rows");
  Tensor y(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x.data() + i * n;
    double* yr = y.data() + i * n;
    double mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= total;
  }
  const bool ng = g.needs_grad(a);
  Tensor y_copy = ng ? y : Tensor();
  return g.record(std::move(y), ng, [a, y = std::move(y_copy), n](Graph& gr, const Tensor& dy) {
    Tensor& ga = gr.grad_buffer(a);
    const std::size_t m = dy.size() / n;
    for (std::size_t i = 0; i < m; ++i) {
      const double* yr = y.data() + i * n;
      const double* dr = dy.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += dr[j] * yr[j];
      double* gr_row = ga.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) gr_row[j] += yr[j] * (dr[j] - dot);
    }
  });
}

Var layer_norm_rows(Var a, double eps) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  Tensor y(x.shape());
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xr = x.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = is;
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = (xr[j] - mu) * is;
  }
  const bool ng = g.needs_grad(a);
  Tensor y_copy = ng ? y : Tensor();
  return g.record(std::move(y), ng,
                  [a, y = std::move(y_copy), inv_std, n](Graph& gr, const Tensor& dy) {
                    Tensor& ga = gr.grad_buffer(a);
                    const std::size_t m = dy.size() / n;
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::size_t i = 0; i < m; ++i) {
                      const double* yr = y.data() + i * n;
                      const double* dr = dy.data() + i * n;
                      double sum_d = 0.0;
                      double sum_dy = 0.0;
                      for (std::size_t j = 0; j < n; ++j) {
                        sum_d += dr[j];
                        sum_dy += dr[j] * yr[j];
                      }
                      const double is = (*inv_std)[i];
                      for (std::size_t j = 0; j < n; ++j) {
                        ga[i * n + j] += is * (dr[j] - inv_n * sum_d - yr[j] * inv_n * sum_dy);
                      }
                    }
                  });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  double total = 0.0;
  for (double v : a.value().values()) total += v;
  return g.record(Tensor::scalar(total), g.needs_grad(a), [a](Graph& gr, const Tensor& dy) {
    Tensor& ga = gr.grad_buffer(a);
    for (double& v : ga.storage()) v += dy[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  require(n > 0, "mean", "empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var mean_rows(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  require(m > 0, "mean_rows", "no rows");
  Tensor y = Tensor::matrix(1, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) y[j] += x[i * n + j];
  }
  const double inv = 1.0 / static_cast<double>(m);
  for (double& v : y.storage()) v *= inv;
  return g.record(std::move(y), g.needs_grad(a), [a, m, n, inv](Graph& gr, const Tensor& dy) {
    Tensor& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += dy[j] * inv;
    }
  });
}

Var sum_cols(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  const std::size_t m = x.rows();
  const std::size_t n = x.cols();
  Tensor y = Tensor::matrix(m, 1);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) y[i] += x[i * n + j];
  }
  return g.record(std::move(y), g.needs_grad(a), [a, m, n](Graph& gr, const Tensor& dy) {
    Tensor& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += dy[i];
    }
  });
}

Var std_all(Var a) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  const std::size_t n = x.size();
  require(n > 0, "std_all", "empty tensor");
  double mu = 0.0;
  for (double v : x.values()) mu += v;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (double v : x.values()) var += (v - mu) * (v - mu);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  return g.record(Tensor::scalar(sd), g.needs_grad(a), [a, mu, sd, n](Graph& gr, const Tensor& dy) {
    if (sd == 0.0) return;
    Tensor& ga = gr.grad_buffer(a);
    const Tensor& x = gr.value(a);
    const double k = dy[0] / (static_cast<double>(n) * sd);
    for (std::size_t i = 0; i < n; ++i) ga[i] += k * (x[i] - mu);
  });
}

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows", "no parts");
  Graph& g = graph_of(parts[0]);
  const std::size_t n = parts[0].value().cols();
  std::size_t m = 0;
  bool ng = false;
  for (Var p : parts) {
    graph_of(parts[0], p);
    require(p.value().cols() == n, "concat_rows", "column mismatch");
    m += p.value().rows();
    ng = ng || g.needs_grad(p);
  }
  Tensor y = Tensor::matrix(m, n);
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    std::copy(v.data(), v.data() + v.size(), y.data() + offset);
    offset += v.size();
  }
  std::vector<Var> kept(parts.begin(), parts.end());
  return g.record(std::move(y), ng, [kept = std::move(kept)](Graph& gr, const Tensor& dy) {
    std::size_t offset = 0;
    for (Var p : kept) {
      const std::size_t len = gr.value(p).size();
      if (gr.needs_grad(p)) {
        Tensor& gp = gr.grad_buffer(p);
        for (std::size_t i = 0; i < len; ++i) gp[i] += dy[offset + i];
      }
      offset += len;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols", "no parts");
  Graph& g = graph_of(parts[0]);
  const std::size_t m = parts[0].value().rows();
  std::size_t n = 0;
  bool ng = false;
  for (Var p : parts) {
    graph_of(parts[0], p);
    require(p.value().rows() == m, "concat_cols", "row mismatch");
    n += p.value().cols();
    ng = ng || g.needs_grad(p);
  }
  Tensor y = Tensor::matrix(m, n);
  std::size_t col = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    const std::size_t pc = v.cols();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < pc; ++j) y[i * n + col + j] = v[i * pc + j];
    }
    col += pc;
  }
  std::vector<Var> kept(parts.begin(), parts.end());
  return g.record(std::move(y), ng, [kept = std::move(kept), m, n](Graph& gr, const Tensor& dy) {
    std::size_t col = 0;
    for (Var p : kept) {
      const std::size_t pc = gr.value(p).cols();
      if (gr.needs_grad(p)) {
        Tensor& gp = gr.grad_buffer(p);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += dy[i * n + col + j];
        }
      }
      col += pc;
    }
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  const std::size_t n = x.cols();
  Tensor y = Tensor::matrix(rows.size(), n);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < x.rows(), "gather_rows", "row index out of range");
    std::copy(x.data() + rows[i] * n, x.data() + (rows[i] + 1) * n, y.data() + i * n);
  }
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return g.record(std::move(y), g.needs_grad(a),
                  [a, idx = std::move(idx), n](Graph& gr, const Tensor& dy) {
                    Tensor& ga = gr.grad_buffer(a);
                    for (std::size_t i = 0; i < idx.size(); ++i) {
                      for (std::size_t j = 0; j < n; ++j) ga[idx[i] * n + j] += dy[i * n + j];
                    }
                  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(a);
  const Tensor& x = a.value();
  const std::size_t n = x.cols();
  require(begin <= end && end <= n, "slice_cols", "range out of bounds");
  const std::size_t m = x.rows();
  const std::size_t w = end - begin;
  Tensor y = Tensor::matrix(m, w);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < w; ++j) y[i * w + j] = x[i * n + begin + j];
  }
  return g.record(std::move(y), g.needs_grad(a), [a, begin, w, m, n](Graph& gr, const Tensor& dy) {
    Tensor& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < w; ++j) ga[i * n + begin + j] += dy[i * w + j];
    }
  });
}

Var reshape(Var a, std::vector<std::size_t> shape) {
  Graph& g = graph_of(a);
  Tensor y(std::move(shape), a.value().storage());
  return g.record(std::move(y), g.needs_grad(a), [a](Graph& gr, const Tensor& dy) {
    Tensor& ga = gr.grad_buffer(a);
    for (std::size_t i = 0; i < dy.size(); ++i) ga[i] += dy[i];
  });
}

Var conv3x3(Var x, std::size_t height, std::size_t width, Var weight, Var bias,
            std::size_t stride) {
  Graph& g = graph_of(x, weight);
  graph_of(x, bias);
  const Tensor& in = x.value();
  const std::size_t cin = in.cols();
  require(in.rows() == height * width, "conv3x3", "input rows != height*width");
  require(weight.value().rows() == 9 * cin, "conv3x3", "weight rows != 9*Cin");
  const std::size_t cout = weight.value().cols();
  require(bias.value().size() == cout, "conv3x3", "bias size != Cout");
  require(stride >= 1, "conv3x3", "stride must be positive");
  const std::size_t oh = conv_out_size(height, stride);
  const std::size_t ow = conv_out_size(width, stride);
  const std::size_t kcols = 9 * cin;

  auto cols = std::make_shared<Tensor>(Tensor::matrix(oh * ow, kcols));
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      double* dst = cols->data() + (oy * ow + ox) * kcols;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const long iy = static_cast<long>(oy * stride + ky) - 1;
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const long ix = static_cast<long>(ox * stride + kx) - 1;
          double* cell = dst + (ky * 3 + kx) * cin;
          if (iy < 0 || ix < 0 || iy >= static_cast<long>(height) ||
              ix >= static_cast<long>(width)) {
            continue;
          }
          const double* src = in.data() + (static_cast<std::size_t>(iy) * width +
                                           static_cast<std::size_t>(ix)) * cin;
          std::copy(src, src + cin, cell);
        }
      }
    }
  }
  Tensor out = Tensor::matrix(oh * ow, cout);
  as_mat(out).noalias() = as_mat(*cols) * as_mat(weight.value());
  const Tensor& b = bias.value();
  for (std::size_t i = 0; i < oh * ow; ++i) {
    for (std::size_t j = 0; j < cout; ++j) out[i * cout + j] += b[j];
  }
  const bool ng = g.needs_grad(x) || g.needs_grad(weight) || g.needs_grad(bias);
  return g.record(
      std::move(out), ng,
      [x, weight, bias, cols, height, width, stride, oh, ow, cin, cout,
       kcols](Graph& gr, const Tensor& dy) {
        if (gr.needs_grad(weight)) {
          as_mat(gr.grad_buffer(weight)).noalias() += as_mat(*cols).transpose() * as_mat(dy);
        }
        if (gr.needs_grad(bias)) {
          Tensor& gb = gr.grad_buffer(bias);
          for (std::size_t i = 0; i < oh * ow; ++i) {
            for (std::size_t j = 0; j < cout; ++j) gb[j] += dy[i * cout + j];
          }
        }
        if (gr.needs_grad(x)) {
          Tensor dcols = Tensor::matrix(oh * ow, kcols);
          as_mat(dcols).noalias() = as_mat(dy) * as_mat(gr.value(weight)).transpose();
          Tensor& gx = gr.grad_buffer(x);
          for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const double* src = dcols.data() + (oy * ow + ox) * kcols;
              for (std::size_t ky = 0; ky < 3; ++ky) {
                const long iy = static_cast<long>(oy * stride + ky) - 1;
                if (iy < 0 || iy >= static_cast<long>(height)) continue;
                for (std::size_t kx = 0; kx < 3; ++kx) {
                  const long ix = static_cast<long>(ox * stride + kx) - 1;
                  if (ix < 0 || ix >= static_cast<long>(width)) continue;
                  double* dst = gx.data() + (static_cast<std::size_t>(iy) * width +
                                             static_cast<std::size_t>(ix)) * cin;
                  const double* cell = src + (ky * 3 + kx) * cin;
                  for (std::size_t c = 0; c < cin; ++c) dst[c] += cell[c];
                }
              }
            }
          }
        }
      });
}

Var sigmoid_focal(Var logits, const Tensor& targets, double alpha, double gamma) {
  Graph& g = graph_of(logits);
  const Tensor& z = logits.value();
  require_same(z, targets, "sigmoid_focal");
  // With p = sigmoid(z): loss(t=1) = -a (1-p)^g log p, loss(t=0) = -(1-a) p^g log(1-p).
  // log p = -softplus(-z), log(1-p) = -softplus(z).
  auto softplus = [](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); };
  auto sig = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  Tensor y(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double p = sig(z[i]);
    if (targets[i] > 0.5) {
      y[i] = alpha * std::pow(1.0 - p, gamma) * softplus(-z[i]);
    } else {
      y[i] = (1.0 - alpha) * std::pow(p, gamma) * softplus(z[i]);
    }
  }
  return g.record(std::move(y), g.needs_grad(logits),
                  [logits, targets, alpha, gamma, softplus, sig](Graph& gr, const Tensor& dy) {
                    const Tensor& z = gr.value(logits);
                    Tensor& gz = gr.grad_buffer(logits);
                    for (std::size_t i = 0; i < z.size(); ++i) {
                      const double p = sig(z[i]);
                      double d;
                      if (targets[i] > 0.5) {
                        // d/dz [a q^g sp(-z)], q = 1-p, dq/dz = -p q
                        const double q = 1.0 - p;
                        const double qg = std::pow(q, gamma);
                        const double dqg = gamma > 0.0 ? gamma * std::pow(q, gamma - 1.0) * (-p * q) : 0.0;
                        d = alpha * (dqg * softplus(-z[i]) + qg * (-q));
                      } else {
                        // d/dz [(1-a) p^g sp(z)], dp/dz = p (1-p)
                        const double pg = std::pow(p, gamma);
                        const double dpg = gamma > 0.0 ? gamma * std::pow(p, gamma - 1.0) * p * (1.0 - p) : 0.0;
                        d = (1.0 - alpha) * (dpg * softplus(z[i]) + pg * p);
                      }
                      gz[i] += dy[i] * d;
                    }
                  });
}

}  // namespace ad
}  // namespace pfrpn
