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

#include "cuesnn/layers.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cuesnn/errors.hpp"

namespace cuesnn {

std::vector<double> kaiming_uniform(std::size_t count, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(count);
  for (double& x : v) x = dist(rng);
  return v;
}

std::vector<double> orthogonal(std::size_t n, double gain, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  const auto ni = static_cast<Eigen::Index>(n);
  Eigen::MatrixXd a(ni, ni);
  for (Eigen::Index i = 0; i < ni; ++i)
    for (Eigen::Index j = 0; j < ni; ++j) a(i, j) = dist(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  // Sign fix makes the draw uniform over the orthogonal group.
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < ni; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  std::vector<double> v(n * n);
  for (Eigen::Index i = 0; i < ni; ++i)
    for (Eigen::Index j = 0; j < ni; ++j) v[static_cast<std::size_t>(i * ni + j)] = gain * q(i, j);
  return v;
}

InputKind classify_input(std::span<const double> values) {
  InputKind kind = InputKind::kBinary;
  for (double v : values) {
    if (v == 0.0 || v == 1.0) continue;
    if (v > 0.0 && v == std::floor(v)) {
      kind = InputKind::kCount;
      continue;
    }
    return InputKind::kReal;
  }
  return kind;
}

namespace {

// Ops of an affine map applied to every row of x. Binary and integer-count
// inputs are pure accumulation; the bias (or folded BN shift) costs one add
// per output.
void count_affine(ForwardContext& ctx, const std::string& name, const Tensor& x, std::size_t in, std::size_t out) {
  if (ctx.ops == nullptr) return;
  const auto values = x.values();
  const std::uint64_t rows = values.size() / in;
  std::uint64_t mults = 0;
  std::uint64_t adds = rows * out;
  switch (classify_input(values)) {
    case InputKind::kBinary:
    case InputKind::kCount: {
      double events = 0.0;
      for (double v : values) events += v;
      adds += static_cast<std::uint64_t>(events) * out;
      break;
    }
    case InputKind::kReal:
      mults += rows * in * out;
      adds += rows * in * out;
      break;
  }
  ctx.ops->count(name, mults, adds);
}

}  // namespace

Linear::Linear(std::string name, std::size_t in, std::size_t out, bool with_bias, Rng& rng) : name_(std::move(name)) {
  if (in == 0 || out == 0) throw ConfigError(fmt::format("{}: linear dims must be positive ({} -> {})", name_, in, out));
  weight_ = Tensor::parameter(Shape{in, out}, kaiming_uniform(in * out, in, rng));
  if (with_bias) bias_ = Tensor::parameter(Shape{out}, std::vector<double>(out, 0.0));
}

Tensor Linear::forward(ForwardContext& ctx, const Tensor& x) const {
  count_affine(ctx, name_, x, in_features(), out_features());
  return linear(x, weight_, bias_);
}

void Linear::collect(NamedTensors& params) const {
  params.emplace_back(name_ + ".weight", weight_);
  if (bias_.defined()) params.emplace_back(name_ + ".bias", bias_);
}

Conv2d::Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               std::size_t stride, Rng& rng)
    : name_(std::move(name)), geom_{kernel, stride, kernel / 2} {
  const std::size_t fan_in = kernel * kernel * in_channels;
  weight_ = Tensor::parameter(Shape{kernel, kernel, in_channels, out_channels},
                              kaiming_uniform(fan_in * out_channels, fan_in, rng));
  bias_ = Tensor::parameter(Shape{out_channels}, std::vector<double>(out_channels, 0.0));
}

Tensor Conv2d::forward(ForwardContext& ctx, const Tensor& x) const {
  Tensor y = conv2d(x, weight_, bias_, geom_);
  if (ctx.ops != nullptr) {
    const std::size_t cout = weight_.dim(3);
    const std::uint64_t synapses = conv2d_active_synapses(x, cout, geom_);
    const std::uint64_t bias_adds = y.numel();
    if (classify_input(x.values()) == InputKind::kBinary) {
      ctx.ops->count(name_, 0, synapses + bias_adds);
    } else {
      ctx.ops->count(name_, synapses, synapses + bias_adds);
    }
  }
  return y;
}

void Conv2d::collect(NamedTensors& params) const {
  params.emplace_back(name_ + ".weight", weight_);
  params.emplace_back(name_ + ".bias", bias_);
}

BatchNorm::BatchNorm(std::string name, std::size_t channels)
    : name_(std::move(name)),
      gamma_(Tensor::parameter(Shape{channels}, std::vector<double>(channels, 1.0))),
      beta_(Tensor::parameter(Shape{channels}, std::vector<double>(channels, 0.0))),
      stats_{Tensor(Shape{channels}, 0.0), Tensor(Shape{channels}, 1.0), 0.1, 1e-5},
      batches_seen_(Shape{1}, 0.0) {}

std::size_t BatchNorm::batches_seen() const { return static_cast<std::size_t>(batches_seen_.item()); }

Tensor BatchNorm::forward(ForwardContext& ctx, const Tensor& x) const {
  if (ctx.training()) {
    batches_seen_.values()[0] += 1.0;
  } else if (batches_seen_.item() == 0.0) {
    if (!warned_uncalibrated_) {
      spdlog::warn("{}: eval-mode batch norm before any training batch; using initial statistics", name_);
      warned_uncalibrated_ = true;
    }
  }
  if (ctx.training() && ctx.calibrate_batchnorm) {
    const double momentum = stats_.momentum;
    stats_.momentum = 1.0;
    Tensor out = batch_norm(x, gamma_, beta_, stats_, true);
    stats_.momentum = momentum;
    return out;
  }
  return batch_norm(x, gamma_, beta_, stats_, ctx.training());
}

void BatchNorm::collect(NamedTensors& params, NamedTensors& buffers) const {
  params.emplace_back(name_ + ".gamma", gamma_);
  params.emplace_back(name_ + ".beta", beta_);
  buffers.emplace_back(name_ + ".running_mean", stats_.running_mean);
  buffers.emplace_back(name_ + ".running_var", stats_.running_var);
  buffers.emplace_back(name_ + ".batches_seen", batches_seen_);
}

Linear fold_batchnorm(const Linear& lin, const BatchNorm& bn) {
  const std::size_t in = lin.in_features();
  const std::size_t out = lin.out_features();
  if (bn.gamma().numel() != out) {
    throw DimensionError(fmt::format("fold_batchnorm: {} outputs but {} BN channels", out, bn.gamma().numel()));
  }
  Rng unused(0);
  Linear folded(lin.name() + ".folded", in, out, true, unused);
  auto w = lin.weight().values();
  auto fw = folded.weight().values();
  auto fb = folded.bias().values();
  auto g = bn.gamma().values();
  auto b = bn.beta().values();
  auto rm = bn.running_mean().values();
  auto rv = bn.running_var().values();
  for (std::size_t j = 0; j < out; ++j) {
    const double k = g[j] / std::sqrt(rv[j] + bn.eps());
    for (std::size_t i = 0; i < in; ++i) fw[i * out + j] = w[i * out + j] * k;
    const double b0 = lin.bias().defined() ? lin.bias().values()[j] : 0.0;
    fb[j] = (b0 - rm[j]) * k + b[j];
  }
  return folded;
}

SpikingNeurons::SpikingNeurons(std::string name, LifParams params) : name_(std::move(name)), params_(params) {
  params_.validate();
}

Tensor SpikingNeurons::forward(ForwardContext& ctx, const Tensor& current) const {
  Tensor s = lif_sequence(current, params_, ctx.spike_mode);
  if (ctx.ops != nullptr) {
    const std::uint64_t updates = current.numel();
    ctx.ops->count(name_, params_.tau != 0.0 ? updates : 0, updates);
  }
  if (ctx.spikes != nullptr) ctx.spikes->record(name_, s);
  return s;
}

void VisualBlockCfg::validate() const {
  if (in_channels == 0 || out_channels == 0) throw ConfigError("visual block channels must be positive");
  if (kernel % 2 == 0) throw ConfigError(fmt::format("visual block kernel must be odd, got {}", kernel));
  if (stride == 0) throw ConfigError("visual block stride must be positive");
}

VisualBlock::VisualBlock(std::string name, const VisualBlockCfg& cfg, const LifParams& neuron, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  conv_ = Conv2d(name + ".conv", cfg.in_channels, cfg.out_channels, cfg.kernel, cfg.stride, rng);
  bn_ = BatchNorm(name + ".bn", cfg.out_channels);
  sn_ = SpikingNeurons(name + ".sn", neuron);
}

Tensor VisualBlock::forward(ForwardContext& ctx, const Tensor& x) const {
  if (x.rank() != 5 || x.shape().back() != cfg_.in_channels) {
    throw DimensionError(fmt::format("visual block expects [T, B, H, W, {}], got {}", cfg_.in_channels, shape_str(x.shape())));
  }
  Tensor s = sn_.forward(ctx, bn_.forward(ctx, conv_.forward(ctx, x)));
  return cfg_.pool ? max_pool2d(s, 2) : s;
}

void VisualBlock::collect(NamedTensors& params, NamedTensors& buffers) const {
  conv_.collect(params);
  bn_.collect(params, buffers);
}

void SpeechBlockCfg::validate() const {
  if (in_dim == 0 || out_dim == 0) throw ConfigError("speech block dims must be positive");
}

SpeechBlock::SpeechBlock(std::string name, const SpeechBlockCfg& cfg, const LifParams& neuron, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  linear_ = Linear(name + ".linear", cfg.in_dim, cfg.out_dim, true, rng);
  bn_ = BatchNorm(name + ".bn", cfg.out_dim);
  sn_ = SpikingNeurons(name + ".sn", neuron);
}

Tensor SpeechBlock::forward(ForwardContext& ctx, const Tensor& x) const {
  return sn_.forward(ctx, bn_.forward(ctx, linear_.forward(ctx, x)));
}

void SpeechBlock::collect(NamedTensors& params, NamedTensors& buffers) const {
  linear_.collect(params);
  bn_.collect(params, buffers);
}

RecurrentSpikingLayer::RecurrentSpikingLayer(std::string name, std::size_t in_dim, std::size_t out_dim,
                                             const LifParams& neuron, Rng& rng)
    : name_(std::move(name)), params_(neuron) {
  params_.validate();
  linear_ = Linear(name_ + ".linear", in_dim, out_dim, true, rng);
  bn_ = BatchNorm(name_ + ".bn", out_dim);
  recurrent_ = Tensor::parameter(Shape{out_dim, out_dim}, orthogonal(out_dim, 0.1, rng));
}

Tensor RecurrentSpikingLayer::forward(ForwardContext& ctx, const Tensor& x) const {
  Tensor current = bn_.forward(ctx, linear_.forward(ctx, x));
  Tensor s = rlif_sequence(current, recurrent_, params_, ctx.spike_mode);
  if (ctx.ops != nullptr) {
    const std::size_t n = recurrent_.dim(0);
    const std::size_t per = s.numel() / s.dim(0);
    double fed_back = 0.0;
    auto sv = s.values();
    for (std::size_t i = 0; i + per < sv.size(); ++i) fed_back += sv[i];
    const std::uint64_t updates = s.numel();
    ctx.ops->count(name_ + ".recurrent", 0, static_cast<std::uint64_t>(fed_back) * n);
    ctx.ops->count(name_ + ".sn", params_.tau != 0.0 ? updates : 0, updates);
  }
  if (ctx.spikes != nullptr) ctx.spikes->record(name_ + ".sn", s);
  return s;
}

void RecurrentSpikingLayer::collect(NamedTensors& params, NamedTensors& buffers) const {
  linear_.collect(params);
  bn_.collect(params, buffers);
  params.emplace_back(name_ + ".recurrent", recurrent_);
}

}  // namespace cuesnn
