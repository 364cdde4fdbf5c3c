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

// Small networks and inputs shared by the model-level tests.

#ifndef CUESNN_TESTS_FIXTURES_HPP_
#define CUESNN_TESTS_FIXTURES_HPP_

#include <random>

#include "cuesnn/model.hpp"
#include "support.hpp"

namespace cuesnn::testing {

// T=3, widths <= 8, two visual blocks, one attention speech block.
inline NetworkConfig tiny_config(FusionMode mode = FusionMode::kHiAvsnn) {
  NetworkConfig c;
  c.time_steps = 3;
  c.num_classes = 4;
  c.input_height = 8;
  c.input_width = 8;
  c.visual_blocks = 2;
  c.visual_channels = {4, 8};
  c.visual_stride2_blocks = {2};
  c.fbank_dim = 6;
  c.encoder_layers = 2;
  c.audio_width = 8;
  c.attention_speech_blocks = 1;
  c.plain_speech_blocks = 0;
  c.cue_positions = {1};
  c.attn_dim = 4;
  c.fusion_mode = mode;
  if (mode != FusionMode::kHiAvsnn) c.set_cue_positions({});
  return c;
}

// Binary voxels with the given density and standard-normal filterbank frames.
inline ModelInput random_input(const NetworkConfig& c, std::size_t batch, std::mt19937_64& rng, double density = 0.3) {
  ModelInput in;
  const std::size_t nv = c.time_steps * batch * c.input_height * c.input_width * 2;
  in.voxels = Tensor({c.time_steps, batch, c.input_height, c.input_width, 2}, binary_values(nv, rng, density));
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> f(c.time_steps * batch * c.fbank_dim);
  for (auto& v : f) v = n(rng);
  in.fbank = Tensor({c.time_steps, batch, c.fbank_dim}, std::move(f));
  return in;
}

}  // namespace cuesnn::testing

#endif  // CUESNN_TESTS_FIXTURES_HPP_
