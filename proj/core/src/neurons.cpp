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

#include "cuesnn/neurons.hpp"

#include <cmath>

#include <fmt/format.h>

#include "cuesnn/errors.hpp"

namespace cuesnn {

void LifParams::validate() const {
  if (!(v_th > 0.0)) throw ConfigError(fmt::format("LIF threshold must be positive, got {}", v_th));
  if (!(gamma > 0.0)) throw ConfigError(fmt::format("surrogate width must be positive, got {}", gamma));
  if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError(fmt::format("LIF decay must lie in [0, 1), got {}", tau));
}

double surrogate_grad(double u, const LifParams& p) {
  return std::max(0.0, p.gamma - std::abs(u - p.v_th)) / (p.gamma * p.gamma);
}

double soft_spike(double u, const LifParams& p) {
  const double d = u - p.v_th;
  const double g2 = 2.0 * p.gamma * p.gamma;
  if (d <= -p.gamma) return 0.0;
  if (d >= p.gamma) return 1.0;
  if (d <= 0.0) return (d + p.gamma) * (d + p.gamma) / g2;
  return 1.0 - (p.gamma - d) * (p.gamma - d) / g2;
}

NeuronUpdate lif_update(double u_prev, double input, const LifParams& p, SpikeMode mode) {
  NeuronUpdate r{};
  r.pre_reset = p.tau * u_prev + input;
  r.spike = mode == SpikeMode::kSpiking ? heaviside_spike(r.pre_reset, p) : soft_spike(r.pre_reset, p);
  r.post_reset = r.pre_reset * (1.0 - r.spike);
  return r;
}

NeuronState::NeuronState(Shape shape, SpikeMode mode) : u_(std::move(shape)), mode_(mode) {}

void NeuronState::set_mode(SpikeMode mode) {
  if (mode == mode_) return;
  if (!recorded_u_.empty()) {
    throw StateError(fmt::format("cannot change spike mode after {} recorded steps; reset() first", recorded_u_.size()));
  }
  mode_ = mode;
}

void NeuronState::reset() {
  for (double& v : u_.values()) v = 0.0;
  recorded_u_.clear();
}

Tensor NeuronState::advance(const std::vector<double>& drive, const LifParams& p) {
  p.validate();
  Tensor spikes(u_.shape());
  auto u = u_.values();
  auto s = spikes.values();
  std::vector<double> pre(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    const NeuronUpdate r = lif_update(u[i], drive[i], p, mode_);
    pre[i] = r.pre_reset;
    s[i] = r.spike;
    u[i] = r.post_reset;
  }
  recorded_u_.push_back(std::move(pre));
  return spikes;
}

Tensor lif_step(NeuronState& state, const Tensor& input_current, const LifParams& params) {
  if (input_current.shape() != state.shape()) {
    throw DimensionError(fmt::format("lif_step: current {} does not match state {}", shape_str(input_current.shape()),
                                     shape_str(state.shape())));
  }
  std::vector<double> drive(input_current.values().begin(), input_current.values().end());
  return state.advance(drive, params);
}

Tensor rlif_step(NeuronState& state, const Tensor& input_current, const Tensor& prev_spikes, const Tensor& recurrent_w,
                 const LifParams& params) {
  const Shape& s = state.shape();
  if (input_current.shape() != s || prev_spikes.shape() != s) {
    throw DimensionError(fmt::format("rlif_step: current {} / previous spikes {} do not match state {}",
                                     shape_str(input_current.shape()), shape_str(prev_spikes.shape()), shape_str(s)));
  }
  const std::size_t n = s.empty() ? 1 : s.back();
  if (recurrent_w.rank() != 2 || recurrent_w.dim(0) != n || recurrent_w.dim(1) != n) {
    throw DimensionError(fmt::format("rlif_step: recurrent weights {} must be [{}, {}]", shape_str(recurrent_w.shape()), n, n));
  }
  std::vector<double> drive(input_current.values().begin(), input_current.values().end());
  auto prev = prev_spikes.values();
  auto w = recurrent_w.values();
  const std::size_t rows = drive.size() / n;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) {
      const double x = prev[r * n + j];
      if (x == 0.0) continue;
      for (std::size_t i = 0; i < n; ++i) drive[r * n + i] += x * w[j * n + i];
    }
  return state.advance(drive, params);
}

namespace {

Tensor run_sequence(const Tensor& current, const Tensor* recurrent_w, const LifParams& params, SpikeMode mode,
                    std::vector<double>* post_reset) {
  params.validate();
  if (current.rank() < 2 || current.dim(0) == 0) {
    throw DimensionError(fmt::format("LIF sequence expects [T, ...] input, got {}", shape_str(current.shape())));
  }
  const std::size_t steps = current.dim(0);
  const std::size_t per = current.numel() / steps;
  const std::size_t n = current.shape().back();
  if (recurrent_w != nullptr &&
      (recurrent_w->rank() != 2 || recurrent_w->dim(0) != n || recurrent_w->dim(1) != n)) {
    throw DimensionError(fmt::format("recurrent weights {} must be [{}, {}]", shape_str(recurrent_w->shape()), n, n));
  }
  const std::size_t rows = per / n;

  const bool tracked = should_track({&current, recurrent_w});
  Tensor out = make_result(current.shape(), tracked);
  auto in = current.values();
  auto s = out.values();
  std::vector<double> pre(current.numel());
  std::vector<double> u(per, 0.0);
  std::vector<double> drive(per);
  if (post_reset != nullptr) post_reset->assign(current.numel(), 0.0);

  for (std::size_t t = 0; t < steps; ++t) {
    std::copy_n(in.begin() + t * per, per, drive.begin());
    if (recurrent_w != nullptr && t > 0) {
      auto w = recurrent_w->values();
      const double* prev = s.data() + (t - 1) * per;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) {
          const double x = prev[r * n + j];
          if (x == 0.0) continue;
          const double* wr = w.data() + j * n;
          double* d = drive.data() + r * n;
          for (std::size_t i = 0; i < n; ++i) d[i] += x * wr[i];
        }
    }
    for (std::size_t i = 0; i < per; ++i) {
      const NeuronUpdate r = lif_update(u[i], drive[i], params, mode);
      pre[t * per + i] = r.pre_reset;
      s[t * per + i] = r.spike;
      u[i] = r.post_reset;
      if (post_reset != nullptr) (*post_reset)[t * per + i] = r.post_reset;
    }
  }

  if (tracked) {
    Tensor w = recurrent_w != nullptr ? *recurrent_w : Tensor();
    GradTape::active()->push(out, [out, current, w, params, mode, steps, per, rows, n, pre = std::move(pre)]() mutable {
      auto g = out.grad();
      auto s = out.values();
      const bool recurrent = w.defined();
      const bool need_in = current.requires_grad();
      const bool need_w = recurrent && w.requires_grad();
      std::span<double> gin = need_in ? current.grad_mut() : std::span<double>{};
      std::span<double> gw = need_w ? w.grad_mut() : std::span<double>{};
      std::vector<double> carry_u(per, 0.0), carry_s(per, 0.0), dh(per);
      for (std::size_t t = steps; t-- > 0;) {
        for (std::size_t i = 0; i < per; ++i) {
          const std::size_t k = t * per + i;
          const double h = pre[k];
          const double spike = s[k];
          const double ds_dh = surrogate_grad(h, params);
          const double du_dh = mode == SpikeMode::kSpiking ? (1.0 - spike) : (1.0 - spike - h * ds_dh);
          const double gs = g[k] + carry_s[i];
          dh[i] = gs * ds_dh + carry_u[i] * du_dh;
          if (need_in) gin[k] += dh[i];
          carry_u[i] = params.tau * dh[i];
        }
        if (recurrent) {
          std::fill(carry_s.begin(), carry_s.end(), 0.0);
          if (t > 0) {
            auto wv = w.values();
            const double* prev = s.data() + (t - 1) * per;
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t j = 0; j < n; ++j) {
                const double* wr = wv.data() + j * n;
                const double* d = dh.data() + r * n;
                double acc = 0.0;
                for (std::size_t i = 0; i < n; ++i) acc += wr[i] * d[i];
                carry_s[r * n + j] = acc;
                const double x = prev[r * n + j];
                if (need_w && x != 0.0) {
                  double* gwr = gw.data() + j * n;
                  for (std::size_t i = 0; i < n; ++i) gwr[i] += x * d[i];
                }
              }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor lif_sequence(const Tensor& current, const LifParams& params, SpikeMode mode, std::vector<double>* post_reset) {
  return run_sequence(current, nullptr, params, mode, post_reset);
}

Tensor rlif_sequence(const Tensor& current, const Tensor& recurrent_w, const LifParams& params, SpikeMode mode,
                     std::vector<double>* post_reset) {
  return run_sequence(current, &recurrent_w, params, mode, post_reset);
}

}  // namespace cuesnn
