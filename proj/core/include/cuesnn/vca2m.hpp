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

#ifndef CUESNN_VCA2M_HPP_
#define CUESNN_VCA2M_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cuesnn/context.hpp"
#include "cuesnn/layers.hpp"
#include "cuesnn/spike_tensor.hpp"

namespace cuesnn {

// T x T lower-triangular (diagonal included) attention mask: row t may
// attend to columns j <= t only.
class CausalMask {
 public:
  explicit CausalMask(std::size_t steps);
  // Throws ContractError unless entries form exactly the lower triangle.
  static CausalMask from_entries(std::size_t steps, std::vector<std::uint8_t> entries);

  std::size_t size() const noexcept { return steps_; }
  bool allows(std::size_t row, std::size_t col) const { return entries_[row * steps_ + col] != 0; }
  std::span<const std::uint8_t> entries() const noexcept { return entries_; }

 private:
  CausalMask(std::size_t steps, std::vector<std::uint8_t> entries) : steps_(steps), entries_(std::move(entries)) {}

  std::size_t steps_;
  std::vector<std::uint8_t> entries_;
};

// scale * sum_j mask[t][j] * (q_t . k_j) * v_j for every batch element.
// q, k, v are [T, B, D]; scale is a one-element tensor; mask is T x T with
// 0/1 entries (not necessarily causal).
Tensor attention_accumulate(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& scale,
                            std::span<const std::uint8_t> mask);

// SN(mask * (Q K^T) V * s) with the LIF population described by neuron.
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& scale, const CausalMask& mask,
                        const LifParams& neuron, SpikeMode mode = SpikeMode::kSpiking);

// Same for single-sample spike tensors [T, D].
SpikeTensor masked_attention(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v, double scale,
                             const CausalMask& mask, const LifParams& neuron);

struct Vca2mConfig {
  std::size_t cue_dim = 10;       // C, width of the visual cue
  std::size_t feature_dim = 256;  // L, width of the audio features
  std::size_t attn_dim = 64;      // D
  LifParams neuron{};
  double attention_threshold = 0.5;
  double initial_scale = 0.25;

  void validate() const;
};

// Visual-cued auditory attention. Visual cues form the query, audio features
// the key and value; the masked, scaled spike attention passes through a
// linear/BN/LIF feedforward and is added back onto the audio features.
class Vca2m {
 public:
  struct Qkv {
    Tensor q;
    Tensor k;
    Tensor v;
  };

  Vca2m() = default;
  Vca2m(std::string name, const Vca2mConfig& cfg, Rng& rng);

  // phi [T, B, C], psi [T, B, L] -> Q, K, V spikes [T, B, D]
  Qkv project_qkv(ForwardContext& ctx, const Tensor& phi, const Tensor& psi) const;
  // SA' spikes [T, B, D]
  Tensor attend(ForwardContext& ctx, const Qkv& qkv) const;
  // psi + SA, values in {0, 1, 2} in spiking mode.
  Tensor forward(ForwardContext& ctx, const Tensor& phi, const Tensor& psi) const;

  const Vca2mConfig& config() const noexcept { return cfg_; }
  Tensor& scale() noexcept { return scale_; }
  const Tensor& scale() const noexcept { return scale_; }
  Linear& w_q() noexcept { return w_q_; }
  Linear& w_k() noexcept { return w_k_; }
  Linear& w_v() noexcept { return w_v_; }
  Linear& feedforward() noexcept { return ff_; }
  BatchNorm& bn_q() noexcept { return bn_q_; }
  BatchNorm& bn_k() noexcept { return bn_k_; }
  BatchNorm& bn_v() noexcept { return bn_v_; }
  BatchNorm& bn_feedforward() noexcept { return bn_ff_; }

  // Replaces the causal mask by an all-ones mask. Only useful to show that
  // the causality harness detects leakage.
  void set_causal(bool causal) noexcept { causal_ = causal; }
  bool causal() const noexcept { return causal_; }

  void collect(NamedTensors& params, NamedTensors& buffers) const;

 private:
  std::string name_;
  Vca2mConfig cfg_;
  Linear w_q_, w_k_, w_v_;
  BatchNorm bn_q_, bn_k_, bn_v_;
  SpikingNeurons sn_q_, sn_k_, sn_v_;
  Tensor scale_;
  LifParams attn_neuron_;
  Linear ff_;
  BatchNorm bn_ff_;
  SpikingNeurons sn_ff_;
  bool causal_ = true;
};

}  // namespace cuesnn

#endif  // CUESNN_VCA2M_HPP_
