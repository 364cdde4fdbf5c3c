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

#include "cuesnn/model.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "cuesnn/errors.hpp"
#include "cuesnn/ops.hpp"

namespace cuesnn {

std::string_view to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kHiAvsnn: return "hi_avsnn";
    case FusionMode::kConcatBaseline: return "concat";
    case FusionMode::kAudioOnly: return "audio_only";
    case FusionMode::kVisualOnly: return "visual_only";
  }
  return "?";
}

FusionMode parse_fusion_mode(std::string_view name) {
  for (FusionMode m : {FusionMode::kHiAvsnn, FusionMode::kConcatBaseline, FusionMode::kAudioOnly, FusionMode::kVisualOnly}) {
    if (name == to_string(m)) return m;
  }
  throw ConfigError(fmt::format("unknown fusion mode '{}' (expected hi_avsnn, concat, audio_only or visual_only)", name));
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool NetworkConfig::cue_at(int position) const {
  return fusion_mode == FusionMode::kHiAvsnn &&
         std::find(cue_positions.begin(), cue_positions.end(), position) != cue_positions.end();
}

void NetworkConfig::set_cue_positions(std::vector<int> positions) {
  const std::size_t total = speech_blocks();
  std::sort(positions.begin(), positions.end());
  const auto inside = static_cast<std::size_t>(std::count_if(
      positions.begin(), positions.end(), [&](int p) { return p >= 1 && static_cast<std::size_t>(p) <= total; }));
  cue_positions = std::move(positions);
  attention_speech_blocks = inside;
  plain_speech_blocks = total - std::min(total, inside);
}

void NetworkConfig::validate() const {
  if (time_steps == 0) throw ConfigError("time_steps must be positive");
  if (num_classes < 2) throw ConfigError(fmt::format("num_classes must be at least 2, got {}", num_classes));
  if (input_height == 0 || input_width == 0) throw ConfigError("input_height/input_width must be positive");
  if (input_pool == 0 || input_height % input_pool != 0 || input_width % input_pool != 0) {
    throw ConfigError(fmt::format("input_pool {} must divide the {}x{} input", input_pool, input_height, input_width));
  }
  if (visual_blocks == 0) throw ConfigError("visual_blocks must be positive");
  if (visual_channels.size() != visual_blocks) {
    throw ConfigError(fmt::format("visual_channels has {} entries for {} visual blocks", visual_channels.size(), visual_blocks));
  }
  for (std::size_t c : visual_channels) {
    if (c == 0) throw ConfigError("visual_channels entries must be positive");
  }
  for (std::size_t b : visual_stride2_blocks) {
    if (b == 0 || b > visual_blocks) {
      throw ConfigError(fmt::format("visual_stride2_blocks entry {} outside 1..{}", b, visual_blocks));
    }
  }
  if (fbank_dim == 0) throw ConfigError("fbank_dim must be positive");
  if (encoder_layers == 0) throw ConfigError("encoder_layers must be positive");
  if (audio_width == 0) throw ConfigError("audio_width must be positive");
  if (attn_dim == 0) throw ConfigError("attn_dim must be positive");
  if (speech_blocks() == 0) throw ConfigError("at least one speech block is required");
  neuron.validate();
  if (!(attention_threshold > 0.0)) throw ConfigError("attention_threshold must be positive");

  if (fusion_mode == FusionMode::kHiAvsnn) {
    const int last = static_cast<int>(speech_blocks()) + 1;
    std::set<int> seen;
    for (int p : cue_positions) {
      if (p < 1 || p > last) throw ConfigError(fmt::format("cue position {} outside 1..{}", p, last));
      if (!seen.insert(p).second) throw ConfigError(fmt::format("cue position {} listed twice", p));
    }
    const auto inside = static_cast<std::size_t>(std::count_if(seen.begin(), seen.end(), [&](int p) { return p < last; }));
    if (inside != attention_speech_blocks) {
      throw ConfigError(fmt::format("cue_positions {} put attention before {} speech blocks but attention_speech_blocks is {}",
                                    cue_positions, inside, attention_speech_blocks));
    }
  }
}

nlohmann::json NetworkConfig::to_json() const {
  return {{"time_steps", time_steps},
          {"num_classes", num_classes},
          {"input_height", input_height},
          {"input_width", input_width},
          {"input_pool", input_pool},
          {"visual_blocks", visual_blocks},
          {"visual_channels", visual_channels},
          {"visual_stride2_blocks", visual_stride2_blocks},
          {"fbank_dim", fbank_dim},
          {"encoder_layers", encoder_layers},
          {"audio_width", audio_width},
          {"attention_speech_blocks", attention_speech_blocks},
          {"plain_speech_blocks", plain_speech_blocks},
          {"cue_positions", cue_positions},
          {"attn_dim", attn_dim},
          {"neuron", {{"tau", neuron.tau}, {"v_th", neuron.v_th}, {"gamma", neuron.gamma}}},
          {"attention_threshold", attention_threshold},
          {"initial_scale", initial_scale},
          {"fusion_mode", std::string(to_string(fusion_mode))}};
}

NetworkConfig NetworkConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("network config must be a JSON object");
  NetworkConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "time_steps") c.time_steps = value.get<std::size_t>();
      else if (key == "num_classes") c.num_classes = value.get<std::size_t>();
      else if (key == "input_height") c.input_height = value.get<std::size_t>();
      else if (key == "input_width") c.input_width = value.get<std::size_t>();
      else if (key == "input_pool") c.input_pool = value.get<std::size_t>();
      else if (key == "visual_blocks") c.visual_blocks = value.get<std::size_t>();
      else if (key == "visual_channels") c.visual_channels = value.get<std::vector<std::size_t>>();
      else if (key == "visual_stride2_blocks") c.visual_stride2_blocks = value.get<std::vector<std::size_t>>();
      else if (key == "fbank_dim") c.fbank_dim = value.get<std::size_t>();
      else if (key == "encoder_layers") c.encoder_layers = value.get<std::size_t>();
      else if (key == "audio_width") c.audio_width = value.get<std::size_t>();
      else if (key == "attention_speech_blocks") c.attention_speech_blocks = value.get<std::size_t>();
      else if (key == "plain_speech_blocks") c.plain_speech_blocks = value.get<std::size_t>();
      else if (key == "cue_positions") c.cue_positions = value.get<std::vector<int>>();
      else if (key == "attn_dim") c.attn_dim = value.get<std::size_t>();
      else if (key == "attention_threshold") c.attention_threshold = value.get<double>();
      else if (key == "initial_scale") c.initial_scale = value.get<double>();
      else if (key == "fusion_mode") c.fusion_mode = parse_fusion_mode(value.get<std::string>());
      else if (key == "neuron") {
        if (!value.is_object()) throw ConfigError("network config field 'neuron' must be an object");
        for (const auto& [nk, nv] : value.items()) {
          if (nk == "tau") c.neuron.tau = nv.get<double>();
          else if (nk == "v_th") c.neuron.v_th = nv.get<double>();
          else if (nk == "gamma") c.neuron.gamma = nv.get<double>();
          else throw ConfigError(fmt::format("network config: unknown field 'neuron.{}'", nk));
        }
      } else {
        throw ConfigError(fmt::format("network config: unknown field '{}'", key));
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(fmt::format("network config field '{}': {}", key, e.what()));
    }
  }
  c.validate();
  return c;
}

std::uint64_t NetworkConfig::fingerprint() const { return fnv1a64(to_json().dump()); }

Network::Network(NetworkConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const std::size_t C = cfg_.num_classes;
  const std::size_t L = cfg_.audio_width;

  if (cfg_.uses_visual()) {
    std::size_t in = 2;
    for (std::size_t i = 0; i < cfg_.visual_blocks; ++i) {
      VisualBlockCfg b;
      b.in_channels = in;
      b.out_channels = cfg_.visual_channels[i];
      const bool s2 = std::find(cfg_.visual_stride2_blocks.begin(), cfg_.visual_stride2_blocks.end(), i + 1) !=
                      cfg_.visual_stride2_blocks.end();
      b.stride = s2 ? 2 : 1;
      visual_.emplace_back(fmt::format("vcen.block{}", i + 1), b, cfg_.neuron, rng);
      in = b.out_channels;
    }
    vcen_fc_ = Linear("vcen.fc", in, C, true, rng);
    vcen_bn_ = BatchNorm("vcen.bn", C);
    vcen_sn_ = SpikingNeurons("vcen.sn", cfg_.neuron);
  }
  if (cfg_.fusion_mode == FusionMode::kVisualOnly) {
    visual_head_ = Linear("visual_head", C, C, true, rng);
    return;
  }

  std::size_t in = cfg_.fbank_dim;
  for (std::size_t i = 0; i < cfg_.encoder_layers; ++i) {
    encoder_.emplace_back(fmt::format("audio.rlif{}", i + 1), in, L, cfg_.neuron, rng);
    in = L;
  }
  const std::size_t n = cfg_.speech_blocks();
  for (std::size_t i = 0; i < n; ++i) {
    SpeechBlockCfg b;
    b.in_dim = (i == 0 && cfg_.fusion_mode == FusionMode::kConcatBaseline) ? L + C : L;
    b.out_dim = L;
    b.has_attention = cfg_.cue_at(static_cast<int>(i) + 1);
    blocks_.emplace_back(fmt::format("spn.block{}", i + 1), b, cfg_.neuron, rng);
  }
  readout_ = Linear("spn.readout", L, C, true, rng);
  if (cfg_.fusion_mode == FusionMode::kHiAvsnn) {
    Vca2mConfig vc;
    vc.cue_dim = C;
    vc.feature_dim = L;
    vc.attn_dim = cfg_.attn_dim;
    vc.neuron = cfg_.neuron;
    vc.attention_threshold = cfg_.attention_threshold;
    vc.initial_scale = cfg_.initial_scale;
    std::vector<int> positions = cfg_.cue_positions;
    std::sort(positions.begin(), positions.end());
    for (int p : positions) cues_.emplace(p, Vca2m(fmt::format("spn.cue{}", p), vc, rng));
  }
}

Tensor Network::vcen_forward(ForwardContext& ctx, const Tensor& voxels) const {
  if (!cfg_.uses_visual()) throw StateError(fmt::format("{} network has no visual subnet", to_string(cfg_.fusion_mode)));
  if (voxels.rank() != 5 || voxels.dim(0) != cfg_.time_steps || voxels.dim(2) != cfg_.input_height ||
      voxels.dim(3) != cfg_.input_width || voxels.dim(4) != 2) {
    throw DimensionError(fmt::format("visual input must be [{}, B, {}, {}, 2], got {}", cfg_.time_steps, cfg_.input_height,
                                     cfg_.input_width, shape_str(voxels.shape())));
  }
  Tensor x = cfg_.input_pool > 1 ? max_pool2d(voxels, cfg_.input_pool) : voxels;
  for (const VisualBlock& b : visual_) x = b.forward(ctx, x);
  Tensor pooled = global_avg_pool(x);
  return vcen_sn_.forward(ctx, vcen_bn_.forward(ctx, vcen_fc_.forward(ctx, pooled)));
}

Tensor Network::encode_audio(ForwardContext& ctx, const Tensor& fbank) const {
  if (!cfg_.uses_audio()) throw StateError("visual_only network has no audio subnet");
  if (fbank.rank() != 3 || fbank.dim(0) != cfg_.time_steps || fbank.dim(2) != cfg_.fbank_dim) {
    throw DimensionError(fmt::format("audio input must be [{}, B, {}], got {}", cfg_.time_steps, cfg_.fbank_dim,
                                     shape_str(fbank.shape())));
  }
  Tensor x = fbank;
  for (const RecurrentSpikingLayer& layer : encoder_) x = layer.forward(ctx, x);
  return x;
}

Tensor Network::spn_forward(ForwardContext& ctx, const Tensor& psi, const Tensor* phi) const {
  const bool fused = cfg_.fusion_mode == FusionMode::kHiAvsnn;
  if (fused != (phi != nullptr)) {
    throw ContractError(fused ? "hi_avsnn speech subnet needs visual cues" : "visual cues given to a network without attention");
  }
  Tensor x = psi;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (auto it = cues_.find(static_cast<int>(i) + 1); it != cues_.end()) x = it->second.forward(ctx, *phi, x);
    x = blocks_[i].forward(ctx, x);
  }
  if (auto it = cues_.find(static_cast<int>(blocks_.size()) + 1); it != cues_.end()) x = it->second.forward(ctx, *phi, x);
  return readout_.forward(ctx, x);
}

Tensor Network::concat_baseline_forward(ForwardContext& ctx, const Tensor& psi, const Tensor& phi) const {
  if (cfg_.fusion_mode != FusionMode::kConcatBaseline) throw StateError("network was not built for concat fusion");
  if (psi.rank() != 3 || phi.rank() != 3 || psi.dim(0) != phi.dim(0)) {
    throw AlignmentError(fmt::format("concat fusion: audio features {} and visual cues {} do not share T",
                                     shape_str(psi.shape()), shape_str(phi.shape())));
  }
  Tensor x = concat_last(psi, phi);
  for (const SpeechBlock& b : blocks_) x = b.forward(ctx, x);
  return readout_.forward(ctx, x);
}

Tensor Network::forward(ForwardContext& ctx, const ModelInput& input) const {
  return forward_traced(ctx, input, nullptr, nullptr);
}

Tensor Network::forward_traced(ForwardContext& ctx, const ModelInput& input, Tensor* phi_out, Tensor* psi_out) const {
  Tensor phi, psi;
  if (cfg_.uses_visual()) phi = vcen_forward(ctx, input.voxels);
  if (cfg_.uses_audio()) psi = encode_audio(ctx, input.fbank);
  if (phi.defined() && psi.defined() && phi.dim(1) != psi.dim(1)) {
    throw AlignmentError(fmt::format("visual batch of {} but audio batch of {}", phi.dim(1), psi.dim(1)));
  }
  if (phi_out) *phi_out = phi;
  if (psi_out) *psi_out = psi;
  switch (cfg_.fusion_mode) {
    case FusionMode::kVisualOnly: return visual_head_.forward(ctx, phi);
    case FusionMode::kAudioOnly: return spn_forward(ctx, psi, nullptr);
    case FusionMode::kConcatBaseline: return concat_baseline_forward(ctx, psi, phi);
    case FusionMode::kHiAvsnn: return spn_forward(ctx, psi, &phi);
  }
  throw StateError("unreachable fusion mode");
}

NamedTensors Network::parameters() const {
  NamedTensors params, buffers;
  for (const auto& b : visual_) b.collect(params, buffers);
  if (cfg_.uses_visual()) {
    vcen_fc_.collect(params);
    vcen_bn_.collect(params, buffers);
  }
  if (cfg_.fusion_mode == FusionMode::kVisualOnly) visual_head_.collect(params);
  for (const auto& e : encoder_) e.collect(params, buffers);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (auto it = cues_.find(static_cast<int>(i) + 1); it != cues_.end()) it->second.collect(params, buffers);
    blocks_[i].collect(params, buffers);
  }
  if (auto it = cues_.find(static_cast<int>(blocks_.size()) + 1); it != cues_.end()) it->second.collect(params, buffers);
  if (cfg_.uses_audio()) readout_.collect(params);
  return params;
}

NamedTensors Network::buffers() const {
  NamedTensors params, buffers;
  for (const auto& b : visual_) b.collect(params, buffers);
  if (cfg_.uses_visual()) vcen_bn_.collect(params, buffers);
  for (const auto& e : encoder_) e.collect(params, buffers);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (auto it = cues_.find(static_cast<int>(i) + 1); it != cues_.end()) it->second.collect(params, buffers);
    blocks_[i].collect(params, buffers);
  }
  if (auto it = cues_.find(static_cast<int>(blocks_.size()) + 1); it != cues_.end()) it->second.collect(params, buffers);
  return buffers;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.numel();
  return n;
}

Vca2m* Network::attention_at(int position) {
  auto it = cues_.find(position);
  return it == cues_.end() ? nullptr : &it->second;
}

void Network::set_attention_causal(bool causal) {
  for (auto& [p, m] : cues_) m.set_causal(causal);
}

namespace {

void check_upto(std::size_t steps, std::optional<std::size_t> upto_t) {
  if (upto_t && (*upto_t == 0 || *upto_t > steps)) {
    throw ContractError(fmt::format("upto_t = {} outside 1..{}", *upto_t, steps));
  }
}

}  // namespace

std::vector<int> predict_batch(const Tensor& logits, std::optional<std::size_t> upto_t) {
  if (logits.rank() != 3) throw DimensionError(fmt::format("predict_batch expects [T, B, C], got {}", shape_str(logits.shape())));
  const std::size_t steps = logits.dim(0), batch = logits.dim(1), classes = logits.dim(2);
  check_upto(steps, upto_t);
  const std::size_t upto = upto_t.value_or(steps);
  const auto& v = logits.values();
  std::vector<int> out(batch);
  std::vector<double> acc(classes);
  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = 0; t < upto; ++t) {
      for (std::size_t c = 0; c < classes; ++c) acc[c] += v[(t * batch + b) * classes + c];
    }
    // The 1/upto factor does not change the argmax; strict > keeps the lowest index on ties.
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (acc[c] > acc[best]) best = c;
    }
    out[b] = static_cast<int>(best);
  }
  return out;
}

int predict(const Tensor& logits, std::optional<std::size_t> upto_t) {
  if (logits.rank() == 2) return predict_batch(reshape(logits.detach(), {logits.dim(0), 1, logits.dim(1)}), upto_t)[0];
  if (logits.rank() == 3 && logits.dim(1) == 1) return predict_batch(logits, upto_t)[0];
  throw DimensionError(fmt::format("predict expects [T, C] or [T, 1, C], got {}", shape_str(logits.shape())));
}

VisualCue extract_visual_cue(const Network& net, const SpikeTensor& voxels_thwc) {
  const Shape& s = voxels_thwc.shape();
  if (s.size() != 4) throw DimensionError(fmt::format("visual cue input must be [T, H, W, 2], got {}", shape_str(s)));
  Tensor x = reshape(voxels_thwc.to_tensor(), {s[0], 1, s[1], s[2], s[3]});
  ForwardContext ctx;
  Tensor phi = net.vcen_forward(ctx, x);
  return VisualCue{SpikeTensor::from_tensor(reshape(phi, {phi.dim(0), phi.dim(2)}))};
}

}  // namespace cuesnn
