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

#ifndef CUESNN_LAYERS_HPP_
#define CUESNN_LAYERS_HPP_

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cuesnn/context.hpp"
#include "cuesnn/neurons.hpp"
#include "cuesnn/ops.hpp"
#include "cuesnn/tensor.hpp"

namespace cuesnn {

using Rng = std::mt19937_64;
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Uniform(-b, b) with b = sqrt(6 / fan_in).
std::vector<double> kaiming_uniform(std::size_t count, std::size_t fan_in, Rng& rng);
// n x n orthogonal matrix (QR of a Gaussian draw) times gain.
std::vector<double> orthogonal(std::size_t n, double gain, Rng& rng);

enum class InputKind { kBinary, kCount, kReal };
// kBinary: all values in {0,1}; kCount: non-negative integers; else kReal.
InputKind classify_input(std::span<const double> values);

// Affine layer over the last axis, weight stored [in, out].
class Linear {
 public:
  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out, bool with_bias, Rng& rng);

  Tensor forward(ForwardContext& ctx, const Tensor& x) const;

  const std::string& name() const noexcept { return name_; }
  std::size_t in_features() const { return weight_.dim(0); }
  std::size_t out_features() const { return weight_.dim(1); }
  const Tensor& weight() const noexcept { return weight_; }
  const Tensor& bias() const noexcept { return bias_; }
  Tensor& weight() noexcept { return weight_; }
  Tensor& bias() noexcept { return bias_; }

  void collect(NamedTensors& params) const;

 private:
  std::string name_;
  Tensor weight_;
  Tensor bias_;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         Rng& rng);

  // x [T, B, H, W, Cin] -> [T, B, Ho, Wo, Cout]
  Tensor forward(ForwardContext& ctx, const Tensor& x) const;

  const Conv2dGeometry& geometry() const noexcept { return geom_; }
  const Tensor& weight() const noexcept { return weight_; }
  Tensor& weight() noexcept { return weight_; }
  Tensor& bias() noexcept { return bias_; }
  void collect(NamedTensors& params) const;

 private:
  std::string name_;
  Conv2dGeometry geom_;
  Tensor weight_;
  Tensor bias_;
};

// Normalises over batch, time and space jointly, per channel (last axis).
// A training-mode forward updates the running statistics in place.
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::string name, std::size_t channels);

  Tensor forward(ForwardContext& ctx, const Tensor& x) const;

  Tensor& gamma() noexcept { return gamma_; }
  Tensor& beta() noexcept { return beta_; }
  const Tensor& gamma() const noexcept { return gamma_; }
  const Tensor& beta() const noexcept { return beta_; }
  const Tensor& running_mean() const noexcept { return stats_.running_mean; }
  const Tensor& running_var() const noexcept { return stats_.running_var; }
  Tensor& running_mean() noexcept { return stats_.running_mean; }
  Tensor& running_var() noexcept { return stats_.running_var; }
  double eps() const noexcept { return stats_.eps; }
  std::size_t batches_seen() const;

  void collect(NamedTensors& params, NamedTensors& buffers) const;

 private:
  std::string name_;
  Tensor gamma_;
  Tensor beta_;
  mutable BatchNormStats stats_;
  mutable Tensor batches_seen_;
  mutable bool warned_uncalibrated_ = false;
};

// Eval-mode batch norm folded into the preceding affine layer.
Linear fold_batchnorm(const Linear& linear, const BatchNorm& bn);

// LIF population over a time-major tensor.
class SpikingNeurons {
 public:
  SpikingNeurons() = default;
  SpikingNeurons(std::string name, LifParams params);

  Tensor forward(ForwardContext& ctx, const Tensor& current) const;
  const LifParams& params() const noexcept { return params_; }

 private:
  std::string name_;
  LifParams params_;
};

struct VisualBlockCfg {
  std::size_t in_channels = 2;
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  // 2x2 max-pool on the output spikes.
  bool pool = false;

  void validate() const;
};

// conv -> BN -> LIF
class VisualBlock {
 public:
  VisualBlock() = default;
  VisualBlock(std::string name, const VisualBlockCfg& cfg, const LifParams& neuron, Rng& rng);

  Tensor forward(ForwardContext& ctx, const Tensor& x) const;
  const VisualBlockCfg& config() const noexcept { return cfg_; }
  void collect(NamedTensors& params, NamedTensors& buffers) const;

 private:
  VisualBlockCfg cfg_;
  Conv2d conv_;
  BatchNorm bn_;
  SpikingNeurons sn_;
};

struct SpeechBlockCfg {
  std::size_t in_dim = 256;
  std::size_t out_dim = 256;
  // Preceded by a visual-cued attention module.
  bool has_attention = false;

  void validate() const;
};

// linear -> BN -> LIF on [T, B, in]
class SpeechBlock {
 public:
  SpeechBlock() = default;
  SpeechBlock(std::string name, const SpeechBlockCfg& cfg, const LifParams& neuron, Rng& rng);

  Tensor forward(ForwardContext& ctx, const Tensor& x) const;
  const SpeechBlockCfg& config() const noexcept { return cfg_; }
  Linear& linear() noexcept { return linear_; }
  BatchNorm& bn() noexcept { return bn_; }
  void collect(NamedTensors& params, NamedTensors& buffers) const;

 private:
  SpeechBlockCfg cfg_;
  Linear linear_;
  BatchNorm bn_;
  SpikingNeurons sn_;
};

// linear -> BN -> recurrent LIF on [T, B, in]
class RecurrentSpikingLayer {
 public:
  RecurrentSpikingLayer() = default;
  RecurrentSpikingLayer(std::string name, std::size_t in_dim, std::size_t out_dim, const LifParams& neuron, Rng& rng);

  Tensor forward(ForwardContext& ctx, const Tensor& x) const;
  Tensor& recurrent_weight() noexcept { return recurrent_; }
  void collect(NamedTensors& params, NamedTensors& buffers) const;

 private:
  std::string name_;
  Linear linear_;
  BatchNorm bn_;
  Tensor recurrent_;
  LifParams params_;
};

}  // namespace cuesnn

#endif  // CUESNN_LAYERS_HPP_
