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

#include "cuesnn/spike_tensor.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "cuesnn/errors.hpp"

namespace cuesnn {

SpikeTensor::SpikeTensor(Shape shape) : shape_(std::move(shape)), bits_(shape_numel(shape_), 0) {}

SpikeTensor::SpikeTensor(Shape shape, std::vector<std::uint8_t> bits)
    : shape_(std::move(shape)), bits_(std::move(bits)) {
  if (bits_.size() != shape_numel(shape_)) {
    throw DimensionError(fmt::format("spike tensor of shape {} needs {} elements, got {}", shape_str(shape_),
                                     shape_numel(shape_), bits_.size()));
  }
  auto bad = std::find_if(bits_.begin(), bits_.end(), [](std::uint8_t b) { return b > 1; });
  if (bad != bits_.end()) {
    throw ContractError(fmt::format("spike tensor element {} has value {}; only 0 and 1 are allowed",
                                    bad - bits_.begin(), static_cast<int>(*bad)));
  }
}

SpikeTensor SpikeTensor::from_values(const Shape& shape, std::span<const double> values) {
  if (values.size() != shape_numel(shape)) {
    throw DimensionError(fmt::format("spike tensor of shape {} needs {} elements, got {}", shape_str(shape),
                                     shape_numel(shape), values.size()));
  }
  std::vector<std::uint8_t> bits(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] == 0.0) {
      bits[i] = 0;
    } else if (values[i] == 1.0) {
      bits[i] = 1;
    } else {
      throw ContractError(fmt::format("spike tensor element {} has value {}; only 0 and 1 are allowed", i, values[i]));
    }
  }
  return SpikeTensor(shape, std::move(bits));
}

std::size_t SpikeTensor::step_size() const {
  if (shape_.empty() || shape_[0] == 0) return 0;
  return bits_.size() / shape_[0];
}

std::span<const std::uint8_t> SpikeTensor::step(std::size_t t) const {
  if (t >= time_steps()) throw DimensionError(fmt::format("timestep {} out of range (T={})", t, time_steps()));
  const std::size_t n = step_size();
  return std::span<const std::uint8_t>(bits_).subspan(t * n, n);
}

std::size_t SpikeTensor::count_ones() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

double SpikeTensor::firing_rate() const {
  return bits_.empty() ? 0.0 : static_cast<double>(count_ones()) / static_cast<double>(bits_.size());
}

Tensor SpikeTensor::to_tensor() const {
  std::vector<double> v(bits_.begin(), bits_.end());
  return Tensor(shape_, std::move(v));
}

}  // namespace cuesnn
