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

#ifndef CUESNN_SYNTH_HPP_
#define CUESNN_SYNTH_HPP_

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "cuesnn/audio.hpp"
#include "cuesnn/events.hpp"

namespace cuesnn {

// Synthetic audio-visual word task. Classes 2j and 2j+1 share the same mouth
// motion, so vision alone can only narrow a sample down to its pair. Each
// class has its own two-tone audio signature, and every clip is overlaid with
// a competing talker from another pair, so audio alone cannot tell which of
// the two signatures is the target. The mouth motion of all pairs is the same
// in the first half of the clip; in the second half pair j opens and closes
// j + 1 times.
struct SynthSpec {
  std::size_t num_classes = 10;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 50;
  std::size_t time_steps = 28;
  std::uint16_t grid = 96;
  double duration_s = 1.0;
  std::uint32_t sample_rate = kSampleRate;
  // Target-to-interferer ratio; nullopt leaves the target clean.
  std::optional<double> snr_db = 0.0;
  double background_snr_db = 30.0;  // white noise floor under every clip
  double motion_px = 24.0;          // full mouth opening, in sensor pixels
  double noise_events_per_s = 500.0;

  std::size_t num_pairs() const { return (num_classes + 1) / 2; }
  void validate() const;
  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

enum class Split { kTrain, kTest };

struct AvSample {
  EventStream events;
  AudioWave audio;
  int label = 0;
};

struct AvDataset {
  std::vector<AvSample> train;
  std::vector<AvSample> test;
};

// Per-sample generator seeded from (seed, split, index), so samples can be
// produced in any order or on demand. Sample i of a split has label
// i % num_classes.
AvSample synth_sample(const SynthSpec& spec, std::uint64_t seed, Split split, std::size_t index);

// Event stream for one visual prototype (pair). Both classes of a pair draw
// from this with the same distribution.
EventStream synth_events(const SynthSpec& spec, std::size_t pair, std::mt19937_64& rng);

// Clean two-tone signature of a class, unit-ish amplitude.
AudioWave synth_tone(const SynthSpec& spec, std::size_t label, std::mt19937_64& rng);

std::size_t split_size(const SynthSpec& spec, Split split);

AvDataset synth_dataset(const SynthSpec& spec, std::uint64_t seed);

}  // namespace cuesnn

#endif  // CUESNN_SYNTH_HPP_
