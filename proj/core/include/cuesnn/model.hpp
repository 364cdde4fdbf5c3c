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

#ifndef CUESNN_MODEL_HPP_
#define CUESNN_MODEL_HPP_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cuesnn/context.hpp"
#include "cuesnn/layers.hpp"
#include "cuesnn/spike_tensor.hpp"
#include "cuesnn/vca2m.hpp"

namespace cuesnn {

enum class FusionMode { kHiAvsnn, kConcatBaseline, kAudioOnly, kVisualOnly };

std::string_view to_string(FusionMode mode);
FusionMode parse_fusion_mode(std::string_view name);

struct NetworkConfig {
  std::size_t time_steps = 28;
  std::size_t num_classes = 10;

  // Visual cue extraction subnet.
  std::size_t input_height = 44;
  std::size_t input_width = 44;
  // Non-learned max-pool applied to the event grid before the first block.
  std::size_t input_pool = 1;
  std::size_t visual_blocks = 8;  // n_v
  std::vector<std::size_t> visual_channels{16, 16, 32, 32, 64, 64, 128, 128};
  // 1-based indices of the blocks whose convolution has stride 2.
  std::vector<std::size_t> visual_stride2_blocks{3, 5, 7};

  // Speech processing subnet.
  std::size_t fbank_dim = 40;
  std::size_t encoder_layers = 2;
  std::size_t audio_width = 256;            // L
  std::size_t attention_speech_blocks = 3;  // n_as
  std::size_t plain_speech_blocks = 0;      // n_s
  // Positions 1..n are "before speech block i"; n + 1 is "before the readout".
  std::vector<int> cue_positions{1, 2, 3};
  std::size_t attn_dim = 64;  // D

  LifParams neuron{};
  double attention_threshold = 0.5;
  double initial_scale = 0.25;
  FusionMode fusion_mode = FusionMode::kHiAvsnn;

  std::size_t speech_blocks() const { return attention_speech_blocks + plain_speech_blocks; }
  bool cue_at(int position) const;
  bool uses_visual() const { return fusion_mode != FusionMode::kAudioOnly; }
  bool uses_audio() const { return fusion_mode != FusionMode::kVisualOnly; }

  // Sets cue_positions and re-derives n_as / n_s so the block count is kept.
  void set_cue_positions(std::vector<int> positions);

  void validate() const;
  nlohmann::json to_json() const;
  // Unknown keys and ill-typed values raise ConfigError naming the field.
  static NetworkConfig from_json(const nlohmann::json& j);
  // Stable hash of the canonical JSON form.
  std::uint64_t fingerprint() const;
};

// FNV-1a, 64 bit.
std::uint64_t fnv1a64(std::string_view bytes);

// One batch of aligned model inputs.
struct ModelInput {
  Tensor voxels;  // [T, B, H, W, 2] binary event occupancy
  Tensor fbank;   // [T, B, F] standardized filterbank frames
};

class Network {
 public:
  Network(NetworkConfig cfg, std::uint64_t seed);

  const NetworkConfig& config() const noexcept { return cfg_; }

  // Per-timestep logits O(t), [T, B, num_classes].
  Tensor forward(ForwardContext& ctx, const ModelInput& input) const;
  // Same as forward, also handing out the intermediate phi / psi when the
  // network computes them (left undefined otherwise).
  Tensor forward_traced(ForwardContext& ctx, const ModelInput& input, Tensor* phi, Tensor* psi) const;

  // Visual cues phi [T, B, C] (spikes).
  Tensor vcen_forward(ForwardContext& ctx, const Tensor& voxels) const;
  // Audio feature spikes psi [T, B, L] from the recurrent encoder.
  Tensor encode_audio(ForwardContext& ctx, const Tensor& fbank) const;
  // Speech blocks with attention at the configured cue positions, then the
  // non-spiking readout. phi must be given iff the mode is hi_avsnn.
  Tensor spn_forward(ForwardContext& ctx, const Tensor& psi, const Tensor* phi) const;
  // Per-timestep concatenation [psi, phi] followed by the speech blocks.
  Tensor concat_baseline_forward(ForwardContext& ctx, const Tensor& psi, const Tensor& phi) const;

  NamedTensors parameters() const;
  NamedTensors buffers() const;
  std::size_t parameter_count() const;

  // Attention module placed at a cue position, or nullptr.
  Vca2m* attention_at(int position);
  void set_attention_causal(bool causal);

 private:
  NetworkConfig cfg_;
  std::vector<VisualBlock> visual_;
  Linear vcen_fc_;
  BatchNorm vcen_bn_;
  SpikingNeurons vcen_sn_;
  Linear visual_head_;
  std::vector<RecurrentSpikingLayer> encoder_;
  std::vector<SpeechBlock> blocks_;
  std::map<int, Vca2m> cues_;
  Linear readout_;
};

// argmax over classes of the mean of O(1..upto_t); ties go to the lowest
// class index. logits is [T, C] or [T, B, C] (returns one label per sample).
int predict(const Tensor& logits, std::optional<std::size_t> upto_t = std::nullopt);
std::vector<int> predict_batch(const Tensor& logits, std::optional<std::size_t> upto_t = std::nullopt);

// Single-sample visual cue as a spike tensor [T, C].
struct VisualCue {
  SpikeTensor phi;
};
VisualCue extract_visual_cue(const Network& net, const SpikeTensor& voxels_thwc);

}  // namespace cuesnn

#endif  // CUESNN_MODEL_HPP_
