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

#ifndef CUESNN_CONTEXT_HPP_
#define CUESNN_CONTEXT_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "cuesnn/neurons.hpp"
#include "cuesnn/tensor.hpp"

namespace cuesnn {

enum class Phase { kTrain, kEval };

struct OpCounts {
  std::uint64_t mults = 0;
  std::uint64_t adds = 0;

  OpCounts& operator+=(const OpCounts& o) {
    mults += o.mults;
    adds += o.adds;
    return *this;
  }
  friend bool operator==(const OpCounts&, const OpCounts&) = default;
};

// Arithmetic operations performed during a forward pass, keyed by layer in
// first-seen order.
class OpCounter {
 public:
  void count(const std::string& layer, std::uint64_t mults, std::uint64_t adds);
  const std::vector<std::pair<std::string, OpCounts>>& layers() const noexcept { return layers_; }
  OpCounts total() const;
  void clear() { layers_.clear(); }

 private:
  std::vector<std::pair<std::string, OpCounts>> layers_;
};

// Per-layer spike totals, for firing-rate statistics.
class SpikeRecorder {
 public:
  struct Entry {
    std::string layer;
    double ones = 0.0;
    std::uint64_t elements = 0;
    double rate() const { return elements == 0 ? 0.0 : ones / static_cast<double>(elements); }
  };

  void record(const std::string& layer, const Tensor& spikes);
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  double overall_rate() const;
  void clear() { entries_.clear(); }

 private:
  std::vector<Entry> entries_;
};

// How a forward pass should run. Passed by reference through every layer.
struct ForwardContext {
  Phase phase = Phase::kEval;
  SpikeMode spike_mode = SpikeMode::kSpiking;
  OpCounter* ops = nullptr;
  SpikeRecorder* spikes = nullptr;
  // Train-phase only: batch norm replaces its running statistics with the
  // current batch statistics instead of blending them in.
  bool calibrate_batchnorm = false;

  bool training() const noexcept { return phase == Phase::kTrain; }
};

}  // namespace cuesnn

#endif  // CUESNN_CONTEXT_HPP_
