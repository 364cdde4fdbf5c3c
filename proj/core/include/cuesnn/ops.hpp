// Copyright 2026 The cuesnn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CUESNN_OPS_HPP_
#define CUESNN_OPS_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "cuesnn/tensor.hpp"

// Differentiable primitives. Each call records one tape node when a tape is
// recording and an operand requires gradients.
namespace cuesnn {

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor square(const Tensor& a);
Tensor sum(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
// Concatenates along the last axis; leading axes must agree.
Tensor concat_last(const Tensor& a, const Tensor& b);

// Plain 2-D matrix product [m,k] x [k,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// x [..., in] . weight [in, out] (+ bias [out]) -> [..., out].
// bias may be an undefined tensor.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

struct Conv2dGeometry {
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;

  std::size_t out_extent(std::size_t in) const { return (in + 2 * padding - kernel) / stride + 1; }
};

// Channels-last cross-correlation: x [..., H, W, Cin], weight
// [K,K,Cin,Cout], bias [Cout] -> [..., Ho, Wo, Cout]; leading axes are images. Zero inputs are skipped, so a binary input
// costs one accumulation per active synapse.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, const Conv2dGeometry& geom);

// Number of weight accumulations a conv2d forward performs for x, i.e.
// sum over nonzero inputs of the outputs they reach times Cout.
std::size_t conv2d_active_synapses(const Tensor& x, std::size_t out_channels, const Conv2dGeometry& geom);

// Non-overlapping k x k max pooling on [..., H, W, C].
Tensor max_pool2d(const Tensor& x, std::size_t k);
// [..., H, W, C] -> [..., C].
Tensor global_avg_pool(const Tensor& x);

struct BatchNormStats {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Per-channel normalisation over every axis but the last. In training mode
// uses batch statistics and updates the running ones; otherwise uses the
// running statistics (an affine map).
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormStats& stats, bool training);

// [T, B, C] -> [B, C], mean over the leading time axis.
Tensor time_mean(const Tensor& x);

// Mean softmax cross-entropy of logits [B, C] against labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace cuesnn

#endif  // CUESNN_OPS_HPP_
