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

#include <cstddef>
#include <string>
#include <vector>

#include "pfrpn/autodiff.hpp"
#include "pfrpn/tensor.hpp"

namespace pfrpn {

/// One pyramid level: an H x W grid of C-dim features stored as (H*W) x C.
/// `level` is 1-based (1 = finest); `stride` is pixels per cell.
template <typename Grid>
struct LevelT {
  int level = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t stride = 1;
  Grid grid{};
};

using LevelFeatures = LevelT<Tensor>;
using LevelVar = LevelT<Var>;

/// Parameter bundles are templates over the element type so one definition
/// serves both the stored tensors (T = Tensor) and the graph handles bound
/// from them (T = Var). Each bundle provides
///   template <typename Self, typename F> static void each(Self&, F&&)
/// calling f(name, member) for every member in a fixed order.
template <template <typename> class W>
W<Var> bind_weights(Graph& g, const W<Tensor>& weights, bool trainable) {
  std::vector<const Tensor*> tensors;
  W<Tensor>::each(weights, [&](const std::string&, const Tensor& t) { tensors.push_back(&t); });
  W<Var> vars;
  std::size_t i = 0;
  W<Var>::each(vars, [&](const std::string&, Var& v) {
    v = trainable ? g.parameter(*tensors[i]) : g.constant(*tensors[i]);
    ++i;
  });
  return vars;
}

/// Gradients of bound weights; members that received no gradient are zero.
template <template <typename> class W>
W<Tensor> collect_gradients(const W<Tensor>& weights, const W<Var>& vars) {
  W<Tensor> grads = weights;
  std::vector<Tensor*> out;
  W<Tensor>::each(grads, [&](const std::string&, Tensor& t) { out.push_back(&t); });
  std::size_t i = 0;
  W<Var>::each(vars, [&](const std::string&, const Var& v) {
    Tensor& t = *out[i++];
    if (v.grad().empty()) {
      t.fill(0.0);
    } else {
      t = v.grad();
    }
  });
  return grads;
}

}  // namespace pfrpn
