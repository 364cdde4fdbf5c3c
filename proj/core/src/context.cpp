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

#include "cuesnn/context.hpp"

#include <algorithm>

namespace cuesnn {

void OpCounter::count(const std::string& layer, std::uint64_t mults, std::uint64_t adds) {
  auto it = std::find_if(layers_.begin(), layers_.end(), [&](const auto& e) { return e.first == layer; });
  if (it == layers_.end()) {
    layers_.emplace_back(layer, OpCounts{mults, adds});
  } else {
    it->second += OpCounts{mults, adds};
  }
}

OpCounts OpCounter::total() const {
  OpCounts t;
  for (const auto& [name, c] : layers_) t += c;
  return t;
}

void SpikeRecorder::record(const std::string& layer, const Tensor& spikes) {
  double ones = 0.0;
  for (double v : spikes.values()) ones += v;
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.layer == layer; });
  if (it == entries_.end()) {
    entries_.push_back(Entry{layer, ones, spikes.numel()});
  } else {
    it->ones += ones;
    it->elements += spikes.numel();
  }
}

double SpikeRecorder::overall_rate() const {
  double ones = 0.0;
  std::uint64_t n = 0;
  for (const auto& e : entries_) {
    ones += e.ones;
    n += e.elements;
  }
  return n == 0 ? 0.0 : ones / static_cast<double>(n);
}

}  // namespace cuesnn
