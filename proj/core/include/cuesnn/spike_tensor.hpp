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

#ifndef CUESNN_SPIKE_TENSOR_HPP_
#define CUESNN_SPIKE_TENSOR_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "cuesnn/tensor.hpp"

namespace cuesnn {

// Binary, time-major activation tensor. Leading axis is the timestep axis.
// One byte per element; every element is exactly 0 or 1.
class SpikeTensor {
 public:
  SpikeTensor() = default;
  explicit SpikeTensor(Shape shape);
  SpikeTensor(Shape shape, std::vector<std::uint8_t> bits);

  // Rejects any value other than 0.0 or 1.0.
  static SpikeTensor from_values(const Shape& shape, std::span<const double> values);
  static SpikeTensor from_tensor(const Tensor& t) { return from_values(t.shape(), t.values()); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t time_steps() const { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t numel() const noexcept { return bits_.size(); }
  // Elements per timestep.
  std::size_t step_size() const;

  std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
  void set(std::size_t i, bool on) { bits_[i] = on ? 1 : 0; }
  std::span<const std::uint8_t> bits() const noexcept { return bits_; }
  std::span<const std::uint8_t> step(std::size_t t) const;

  std::size_t count_ones() const;
  double firing_rate() const;

  Tensor to_tensor() const;

  friend bool operator==(const SpikeTensor&, const SpikeTensor&) = default;

 private:
  Shape shape_;
  std::vector<std::uint8_t> bits_;
};

}  // namespace cuesnn

#endif  // CUESNN_SPIKE_TENSOR_HPP_
