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

#ifndef CUESNN_NEURONS_HPP_
#define CUESNN_NEURONS_HPP_

#include <vector>

#include "cuesnn/tensor.hpp"

namespace cuesnn {

struct LifParams {
  // Membrane decay per timestep, in [0, 1).
  double tau = 0.5;
  double v_th = 1.0;
  // Half-width of the triangular surrogate.
  double gamma = 1.0;

  void validate() const;
};

// kSpiking: Heaviside forward, triangular surrogate backward.
// kRelaxed: the forward spike is the clamped piecewise-quadratic ramp whose
// exact derivative is the triangular surrogate, so the whole network is
// differentiable and can be checked against finite differences.
enum class SpikeMode { kSpiking, kRelaxed };

// (1/gamma^2) * max(0, gamma - |u - v_th|)
double surrogate_grad(double u, const LifParams& p);

// Antiderivative of surrogate_grad clamped to [0, 1]; equals 0.5 at v_th.
double soft_spike(double u, const LifParams& p);

// Heaviside with the convention that u == v_th fires.
inline double heaviside_spike(double u, const LifParams& p) { return u >= p.v_th ? 1.0 : 0.0; }

struct NeuronUpdate {
  double pre_reset;
  double spike;
  double post_reset;
};

// One neuron, one timestep: integrate, fire, multiplicative reset.
NeuronUpdate lif_update(double u_prev, double input, const LifParams& p, SpikeMode mode);

// Stepwise membrane state for one layer. Starts at the resting potential 0.
class NeuronState {
 public:
  explicit NeuronState(Shape shape, SpikeMode mode = SpikeMode::kSpiking);

  const Tensor& u() const noexcept { return u_; }
  const Shape& shape() const { return u_.shape(); }
  SpikeMode mode() const noexcept { return mode_; }
  std::size_t steps() const noexcept { return recorded_u_.size(); }
  // Pre-reset potential of every recorded step.
  const std::vector<std::vector<double>>& recorded_u() const noexcept { return recorded_u_; }

  // Only allowed before the first step or after reset().
  void set_mode(SpikeMode mode);
  void reset();

 private:
  friend Tensor lif_step(NeuronState&, const Tensor&, const LifParams&);
  friend Tensor rlif_step(NeuronState&, const Tensor&, const Tensor&, const Tensor&, const LifParams&);
  Tensor advance(const std::vector<double>& drive, const LifParams& p);

  Tensor u_;
  SpikeMode mode_;
  std::vector<std::vector<double>> recorded_u_;
};

// u <- tau*u + current; fire; reset. Returns the layer's spikes for this step.
Tensor lif_step(NeuronState& state, const Tensor& input_current, const LifParams& params);

// lif_step with the extra recurrent drive prev_spikes . recurrent_w, where
// recurrent_w is [N, N] over the last axis (row j holds the weights leaving
// neuron j).
Tensor rlif_step(NeuronState& state, const Tensor& input_current, const Tensor& prev_spikes, const Tensor& recurrent_w,
                 const LifParams& params);

// Differentiable LIF over a whole time-major sequence current [T, ...].
// The backward pass is STBP: it walks the timesteps in reverse, carrying the
// potential gradient through the decay. In spiking mode the reset factor
// (1 - x) is held constant; in relaxed mode it is differentiated exactly.
// When post_reset is non-null it receives the post-reset potentials.
Tensor lif_sequence(const Tensor& current, const LifParams& params, SpikeMode mode,
                    std::vector<double>* post_reset = nullptr);

// Recurrent variant: current [T, ..., N], recurrent_w [N, N].
Tensor rlif_sequence(const Tensor& current, const Tensor& recurrent_w, const LifParams& params, SpikeMode mode,
                     std::vector<double>* post_reset = nullptr);

}  // namespace cuesnn

#endif  // CUESNN_NEURONS_HPP_
