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

#ifndef CUESNN_CHECKPOINT_HPP_
#define CUESNN_CHECKPOINT_HPP_

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cuesnn/model.hpp"

namespace cuesnn {

// Optimizer and loop state needed to resume a training phase exactly.
struct TrainState {
  std::string phase;
  std::size_t epoch = 0;  // epochs completed within the phase
  std::uint64_t adam_step = 0;
  std::string rng_state;
  NamedTensors adam_m;
  NamedTensors adam_v;
};

// Binary layout, little-endian:
//   "CUESNNCK" | u32 version | u64 config fingerprint | u64 n, config JSON
//   u32 tensor count | per tensor: u32 n, name | u32 rank | u64 dims | f64 data
//   u8 has_state | [u64 n, state JSON | tensors as above]
// Parameters are stored as "param/<name>", buffers as "buffer/<name>",
// Adam moments as "adam.m/<name>" and "adam.v/<name>".
void save_checkpoint(const std::filesystem::path& path, const Network& net, const TrainState* state = nullptr);

struct Checkpoint {
  NetworkConfig config;
  std::unique_ptr<Network> network;
  std::optional<TrainState> state;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

// Loads into an existing network. The stored config fingerprint and every
// tensor shape must match; otherwise IoError/ConfigError.
void restore_checkpoint(Network& net, const std::filesystem::path& path, TrainState* state = nullptr);

// Copies every parameter and buffer of src whose name and shape also exist in
// dst. Returns the copied names.
std::vector<std::string> copy_matching_tensors(Network& dst, const Network& src);

}  // namespace cuesnn

#endif  // CUESNN_CHECKPOINT_HPP_
