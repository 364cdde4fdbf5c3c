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

#ifndef CUESNN_DATASET_HPP_
#define CUESNN_DATASET_HPP_

#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "cuesnn/audio.hpp"
#include "cuesnn/events.hpp"
#include "cuesnn/model.hpp"
#include "cuesnn/synth.hpp"

namespace cuesnn {

struct ManifestEntry {
  std::filesystem::path event_path;
  std::filesystem::path audio_path;
  int label = 0;
};

// One JSON object per line: {"event_path", "audio_path", "label"}. Relative
// paths are resolved against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// How raw samples become model inputs.
struct DataPipeline {
  std::size_t time_steps = 28;
  std::size_t sensor_crop = 96;  // central crop of the sensor before augmentation
  VisualAugmentOptions visual{};
  VoxelizeOptions voxelize{};
  bool augment_audio = true;
  AudioAugmentOptions audio{};
  FbankOptions fbank{};

  nlohmann::json to_json() const;
  static DataPipeline from_json(const nlohmann::json& j);
};

// A sample with its filterbank precomputed. The waveform is kept only when
// audio augmentation needs to recompute the filterbank every epoch.
struct PreparedSample {
  EventStream events;
  std::optional<AudioWave> audio;
  Tensor fbank;  // [T, F]
  int label = 0;
};

PreparedSample prepare_sample(EventStream events, AudioWave audio, int label, const DataPipeline& pipeline,
                              bool keep_audio);

// Voxelized, center-cropped to pipeline.sensor_crop; [T, 2, crop, crop].
EventVoxelGrid sensor_grid(const EventStream& events, const DataPipeline& pipeline);

// Model-ready visual input for one sample, [T, H, W, 2] flattened row-major.
std::vector<double> visual_input(const PreparedSample& sample, const DataPipeline& pipeline, std::mt19937_64* rng);

// Assembles a batch. With rng == nullptr the evaluation transforms are used
// (center crop, stored filterbank); otherwise the training augmentations.
ModelInput make_batch(std::span<const PreparedSample* const> samples, const DataPipeline& pipeline,
                      std::mt19937_64* rng);
ModelInput make_batch(const PreparedSample& sample, const DataPipeline& pipeline);

std::vector<PreparedSample> load_manifest_samples(const std::filesystem::path& manifest, const DataPipeline& pipeline,
                                                  bool keep_audio);

std::vector<PreparedSample> synth_prepared(const SynthSpec& spec, std::uint64_t seed, Split split,
                                           const DataPipeline& pipeline, bool keep_audio);

// Writes <dir>/{train,test}/{events,audio}/NNNNNN.* plus a manifest per
// split and the generator parameters as <dir>/spec.json.
void write_synth_dataset(const std::filesystem::path& dir, const SynthSpec& spec, std::uint64_t seed);

}  // namespace cuesnn

#endif  // CUESNN_DATASET_HPP_
