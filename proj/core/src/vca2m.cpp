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

#include "cuesnn/vca2m.hpp"

#include <cmath>

#include <fmt/format.h>

#include "cuesnn/errors.hpp"

namespace cuesnn {

CausalMask::CausalMask(std::size_t steps) : steps_(steps), entries_(steps * steps, 0) {
  for (std::size_t i = 0; i < steps; ++i)
    for (std::size_t j = 0; j <= i; ++j) entries_[i * steps + j] = 1;
}

CausalMask CausalMask::from_entries(std::size_t steps, std::vector<std::uint8_t> entries) {
  if (entries.size() != steps * steps) {
    throw DimensionError(fmt::format("mask for T={} needs {} entries, got {}", steps, steps * steps, entries.size()));
  }
  for (std::size_t i = 0; i < steps; ++i)
    for (std::size_t j = 0; j < steps; ++j) {
      const std::uint8_t want = j <= i ? 1 : 0;
      if (entries[i * steps + j] != want) {
        throw ContractError(fmt::format("attention mask is not lower triangular: entry ({}, {}) is {}", i, j,
                                        static_cast<int>(entries[i * steps + j])));
      }
    }
  return CausalMask(steps, std::move(entries));
}

Tensor attention_accumulate(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& scale,
                            std::span<const std::uint8_t> mask) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError(fmt::format("attention: Q {}, K {}, V {} must share a [T, B, D] shape", shape_str(q.shape()),
                                     shape_str(k.shape()), shape_str(v.shape())));
  }
  if (scale.numel() != 1) throw DimensionError("attention: scale must be a single value");
  const std::size_t steps = q.dim(0), batch = q.dim(1), d = q.dim(2);
  if (mask.size() != steps * steps) {
    throw DimensionError(fmt::format("attention: mask has {} entries for T={}", mask.size(), steps));
  }
  const double s = scale.item();
  const bool tracked = should_track({&q, &k, &v, &scale});
  Tensor out = make_result(q.shape(), tracked);
  auto qv = q.values();
  auto kv = k.values();
  auto vv = v.values();
  auto o = out.values();
  auto row = [&](std::size_t t, std::size_t b) { return (t * batch + b) * d; };
  // Masked scores, kept for backward.
  std::vector<double> scores(batch * steps * steps, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < steps; ++t) {
      double* ot = o.data() + row(t, b);
      for (std::size_t j = 0; j < steps; ++j) {
        if (mask[t * steps + j] == 0) continue;
        double a = 0.0;
        const double* qt = qv.data() + row(t, b);
        const double* kj = kv.data() + row(j, b);
        for (std::size_t c = 0; c < d; ++c) a += qt[c] * kj[c];
        scores[(b * steps + t) * steps + j] = a;
        if (a == 0.0) continue;
        const double* vj = vv.data() + row(j, b);
        for (std::size_t c = 0; c < d; ++c) ot[c] += a * vj[c];
      }
      for (std::size_t c = 0; c < d; ++c) ot[c] *= s;
    }
  if (tracked) {
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    GradTape::active()->push(out, [out, q, k, v, scale, steps, batch, d, s, m = std::move(m),
                                   scores = std::move(scores)]() mutable {
      auto g = out.grad();
      auto qv = q.values();
      auto kv = k.values();
      auto vv = v.values();
      const bool nq = q.requires_grad(), nk = k.requires_grad(), nv = v.requires_grad();
      std::span<double> gq = nq ? q.grad_mut() : std::span<double>{};
      std::span<double> gk = nk ? k.grad_mut() : std::span<double>{};
      std::span<double> gv = nv ? v.grad_mut() : std::span<double>{};
      auto row = [&](std::size_t t, std::size_t b) { return (t * batch + b) * d; };
      double gs = 0.0;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < steps; ++t) {
          const double* gt = g.data() + row(t, b);
          for (std::size_t j = 0; j < steps; ++j) {
            if (m[t * steps + j] == 0) continue;
            const double a = scores[(b * steps + t) * steps + j];
            const double* vj = vv.data() + row(j, b);
            if (nv && a != 0.0) {
              double* gvj = gv.data() + row(j, b);
              for (std::size_t c = 0; c < d; ++c) gvj[c] += s * a * gt[c];
            }
            double da = 0.0;
            for (std::size_t c = 0; c < d; ++c) da += gt[c] * vj[c];
            da *= s;
            if (da == 0.0) continue;
            if (nq) {
              double* gqt = gq.data() + row(t, b);
              const double* kj = kv.data() + row(j, b);
              for (std::size_t c = 0; c < d; ++c) gqt[c] += da * kj[c];
            }
            if (nk) {
              double* gkj = gk.data() + row(j, b);
              const double* qt = qv.data() + row(t, b);
              for (std::size_t c = 0; c < d; ++c) gkj[c] += da * qt[c];
            }
          }
        }
      if (scale.requires_grad()) {
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t t = 0; t < steps; ++t) {
            const double* gt = g.data() + row(t, b);
            for (std::size_t j = 0; j < steps; ++j) {
              const double a = scores[(b * steps + t) * steps + j];
              if (a == 0.0) continue;
              const double* vj = vv.data() + row(j, b);
              for (std::size_t c = 0; c < d; ++c) gs += gt[c] * a * vj[c];
            }
          }
        scale.grad_mut()[0] += gs;
      }
    });
  }
  return out;
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& scale, const CausalMask& mask,
                        const LifParams& neuron, SpikeMode mode) {
  if (q.rank() != 3 || q.dim(0) != mask.size()) {
    throw DimensionError(fmt::format("masked_attention: Q {} does not match a T={} mask", shape_str(q.shape()), mask.size()));
  }
  return lif_sequence(attention_accumulate(q, k, v, scale, mask.entries()), neuron, mode);
}

SpikeTensor masked_attention(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v, double scale,
                             const CausalMask& mask, const LifParams& neuron) {
  auto as_batch = [](const SpikeTensor& s) {
    if (s.shape().size() != 2) throw DimensionError(fmt::format("expected [T, D] spikes, got {}", shape_str(s.shape())));
    Tensor t = s.to_tensor();
    return reshape(t, Shape{s.shape()[0], 1, s.shape()[1]});
  };
  Tensor out = masked_attention(as_batch(q), as_batch(k), as_batch(v), Tensor::scalar(scale), mask, neuron);
  return SpikeTensor::from_values(q.shape(), out.values());
}

void Vca2mConfig::validate() const {
  if (cue_dim == 0 || feature_dim == 0 || attn_dim == 0) throw ConfigError("attention module dims must be positive");
  if (!std::isfinite(initial_scale)) throw ConfigError("attention scale must be finite");
  neuron.validate();
  LifParams a = neuron;
  a.v_th = attention_threshold;
  a.validate();
}

Vca2m::Vca2m(std::string name, const Vca2mConfig& cfg, Rng& rng) : name_(std::move(name)), cfg_(cfg) {
  cfg_.validate();
  w_q_ = Linear(name_ + ".w_q", cfg.cue_dim, cfg.attn_dim, false, rng);
  w_k_ = Linear(name_ + ".w_k", cfg.feature_dim, cfg.attn_dim, false, rng);
  w_v_ = Linear(name_ + ".w_v", cfg.feature_dim, cfg.attn_dim, false, rng);
  bn_q_ = BatchNorm(name_ + ".bn_q", cfg.attn_dim);
  bn_k_ = BatchNorm(name_ + ".bn_k", cfg.attn_dim);
  bn_v_ = BatchNorm(name_ + ".bn_v", cfg.attn_dim);
  sn_q_ = SpikingNeurons(name_ + ".sn_q", cfg.neuron);
  sn_k_ = SpikingNeurons(name_ + ".sn_k", cfg.neuron);
  sn_v_ = SpikingNeurons(name_ + ".sn_v", cfg.neuron);
  scale_ = Tensor::parameter(Shape{1}, {cfg.initial_scale});
  attn_neuron_ = cfg.neuron;
  attn_neuron_.v_th = cfg.attention_threshold;
  ff_ = Linear(name_ + ".ff", cfg.attn_dim, cfg.feature_dim, true, rng);
  bn_ff_ = BatchNorm(name_ + ".bn_ff", cfg.feature_dim);
  sn_ff_ = SpikingNeurons(name_ + ".sn_ff", cfg.neuron);
}

Vca2m::Qkv Vca2m::project_qkv(ForwardContext& ctx, const Tensor& phi, const Tensor& psi) const {
  if (phi.rank() != 3 || psi.rank() != 3) {
    throw DimensionError(fmt::format("{}: expected [T, B, C] cues and [T, B, L] features, got {} and {}", name_,
                                     shape_str(phi.shape()), shape_str(psi.shape())));
  }
  if (phi.dim(0) != psi.dim(0)) {
    throw AlignmentError(fmt::format("{}: visual cues have T={} but audio features have T={}", name_, phi.dim(0), psi.dim(0)));
  }
  if (phi.dim(1) != psi.dim(1)) {
    throw DimensionError(fmt::format("{}: batch sizes differ ({} vs {})", name_, phi.dim(1), psi.dim(1)));
  }
  Qkv out;
  out.q = sn_q_.forward(ctx, bn_q_.forward(ctx, w_q_.forward(ctx, phi)));
  out.k = sn_k_.forward(ctx, bn_k_.forward(ctx, w_k_.forward(ctx, psi)));
  out.v = sn_v_.forward(ctx, bn_v_.forward(ctx, w_v_.forward(ctx, psi)));
  return out;
}

Tensor Vca2m::attend(ForwardContext& ctx, const Qkv& qkv) const {
  const std::size_t steps = qkv.q.dim(0);
  const CausalMask causal(steps);
  std::vector<std::uint8_t> all_ones;
  std::span<const std::uint8_t> mask = causal.entries();
  if (!causal_) {
    all_ones.assign(steps * steps, 1);
    mask = all_ones;
  }
  Tensor acc = attention_accumulate(qkv.q, qkv.k, qkv.v, scale_, mask);
  if (ctx.ops != nullptr) {
    // With binary Q, K, V both products reduce to accumulations; only the
    // scalar s multiplies.
    const std::size_t batch = qkv.q.dim(1), d = qkv.q.dim(2);
    auto q = qkv.q.values();
    auto k = qkv.k.values();
    auto v = qkv.v.values();
    std::uint64_t adds = 0;
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t j = 0; j < steps; ++j) {
          if (mask[t * steps + j] == 0) continue;
          const std::size_t qt = (t * batch + b) * d, kj = (j * batch + b) * d;
          std::uint64_t overlap = 0;
          for (std::size_t c = 0; c < d; ++c) overlap += (q[qt + c] != 0.0 && k[kj + c] != 0.0) ? 1 : 0;
          adds += overlap;
          if (overlap == 0) continue;
          for (std::size_t c = 0; c < d; ++c) adds += v[kj + c] != 0.0 ? 1 : 0;
        }
    ctx.ops->count(name_ + ".attention", steps * batch * d, adds);
  }
  Tensor sa = lif_sequence(acc, attn_neuron_, ctx.spike_mode);
  if (ctx.ops != nullptr) {
    ctx.ops->count(name_ + ".sn_attn", attn_neuron_.tau != 0.0 ? sa.numel() : 0, sa.numel());
  }
  if (ctx.spikes != nullptr) ctx.spikes->record(name_ + ".sn_attn", sa);
  return sa;
}

Tensor Vca2m::forward(ForwardContext& ctx, const Tensor& phi, const Tensor& psi) const {
  if (psi.rank() != 3 || psi.dim(2) != cfg_.feature_dim || phi.rank() != 3 || phi.dim(2) != cfg_.cue_dim) {
    throw DimensionError(fmt::format("{}: expected cues [T, B, {}] and features [T, B, {}], got {} and {}", name_,
                                     cfg_.cue_dim, cfg_.feature_dim, shape_str(phi.shape()), shape_str(psi.shape())));
  }
  const Qkv qkv = project_qkv(ctx, phi, psi);
  Tensor sa_prime = attend(ctx, qkv);
  Tensor sa = sn_ff_.forward(ctx, bn_ff_.forward(ctx, ff_.forward(ctx, sa_prime)));
  if (ctx.ops != nullptr) ctx.ops->count(name_ + ".residual", 0, psi.numel());
  return add(psi, sa);
}

void Vca2m::collect(NamedTensors& params, NamedTensors& buffers) const {
  w_q_.collect(params);
  w_k_.collect(params);
  w_v_.collect(params);
  bn_q_.collect(params, buffers);
  bn_k_.collect(params, buffers);
  bn_v_.collect(params, buffers);
  params.emplace_back(name_ + ".scale", scale_);
  ff_.collect(params);
  bn_ff_.collect(params, buffers);
}

}  // namespace cuesnn
