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
#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "pfrpn/tensor.hpp"

namespace pfrpn {

class Graph;

/// Handle to a node recorded on a Graph. Cheap to copy; only valid while the
/// owning graph is alive.
struct Var {
  Graph* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return graph != nullptr; }
};

/// Gradient tape. Every op appends one node holding its forward value and an
/// adjoint closure; backward() replays the closures once each, newest first.
/// A graph is single-owner and not thread-safe.
class Graph {
 public:
  using Adjoint = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is kept after backward().
  Var parameter(Tensor value);

  Var record(Tensor value, bool needs_grad, Adjoint adjoint);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  /// Accumulated gradient; empty when no adjoint reached `v`.
  const Tensor& grad(Var v) const;
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Zero-initialized gradient buffer of node `v` (allocated on first use).
  Tensor& grad_buffer(Var v);

  /// Seeds d(loss)/d(loss) = 1 and accumulates adjoints; `loss` must be 1x1.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Adjoint adjoint;
  };
  std::deque<Node> nodes_;  // stable references across record()
};

// Differentiable primitives. Binary elementwise ops require equal shapes;
// "_row" variants broadcast a 1 x N operand across the rows of an M x N one.
namespace ad {

Var matmul(Var a, Var b);     // (M x K)(K x N)
Var matmul_nt(Var a, Var b);  // (M x K)(N x K)^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var minimum(Var a, Var b);
Var maximum(Var a, Var b);
Var add_row(Var a, Var row);
Var mul_row(Var a, Var row);
/// s (1x1) times every element of a.
Var scale_by(Var s, Var a);
Var scale(Var a, double factor);
Var add_scalar(Var a, double offset);

Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var abs(Var a);
Var sqrt(Var a);
Var square(Var a);

Var softmax_rows(Var a);
/// Per-row standardization (x - mean) / sqrt(var + eps), no affine terms.
Var layer_norm_rows(Var a, double eps = 1e-5);

Var sum(Var a);        // -> 1x1
Var mean(Var a);       // -> 1x1
Var mean_rows(Var a);  // column means -> 1 x N
Var sum_cols(Var a);   // row sums -> M x 1
/// Population standard deviation of all elements -> 1x1; gradient is 0 when
/// the deviation is exactly 0.
Var std_all(Var a);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var reshape(Var a, std::vector<std::size_t> shape);

/// 3x3 convolution with zero padding 1. `x` is (H*W) x Cin, `weight` is
/// (9*Cin) x Cout laid out as [ky][kx][cin], `bias` is 1 x Cout.
Var conv3x3(Var x, std::size_t height, std::size_t width, Var weight, Var bias,
            std::size_t stride);

/// Elementwise sigmoid focal loss against constant 0/1 targets.
Var sigmoid_focal(Var logits, const Tensor& targets, double alpha, double gamma);

}  // namespace ad

/// Output spatial size of conv3x3 with padding 1.
inline std::size_t conv_out_size(std::size_t in, std::size_t stride) {
  return (in - 1) / stride + 1;
}

}  // namespace pfrpn
