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

#ifndef CUESNN_EVENTS_HPP_
#define CUESNN_EVENTS_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "cuesnn/spike_tensor.hpp"

namespace cuesnn {

struct Event {
  std::uint64_t timestamp_us = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::uint8_t polarity = 0;

  friend bool operator==(const Event&, const Event&) = default;
};

// Camera events in timestamp order.
struct EventStream {
  std::vector<Event> events;
  std::uint16_t width = 0;
  std::uint16_t height = 0;

  // Throws ContractError on unsorted timestamps or out-of-range pixels.
  void validate() const;
  friend bool operator==(const EventStream&, const EventStream&) = default;
};

// Binary occupancy grid [T, 2, H, W]; channel 0 is OFF, 1 is ON polarity.
struct EventVoxelGrid {
  SpikeTensor grid;

  std::size_t time_steps() const { return grid.shape()[0]; }
  std::size_t height() const { return grid.shape()[2]; }
  std::size_t width() const { return grid.shape()[3]; }
  bool at(std::size_t t, std::size_t p, std::size_t y, std::size_t x) const {
    return grid[((t * 2 + p) * height() + y) * width() + x] != 0;
  }
};

// Bin of timestamp ts when [t_first, t_last] is cut into `steps` equal bins:
// floor((ts - t_first) * steps / (t_last - t_first)), with t_last in the
// final bin.
std::size_t event_bin(std::uint64_t ts, std::uint64_t t_first, std::uint64_t t_last, std::size_t steps);

struct VoxelizeOptions {
  // Debug knob: OR the next n bins into each bin. Anything but 0 breaks
  // causality and exists so the causality harness can be shown to catch it.
  std::size_t leak_future_bins = 0;
};

// Splits the stream into `steps` time bins over [t_first, t_last] and
// max-pools space down to height x width (the source size must be an
// integer multiple). A cell is 1 when at least one event landed in it.
EventVoxelGrid voxelize(const EventStream& stream, std::size_t steps, std::size_t height, std::size_t width,
                        const VoxelizeOptions& options = {});

struct VisualAugmentOptions {
  std::size_t crop = 88;
  std::size_t output = 44;
  double flip_probability = 0.5;
};

struct CropPlacement {
  std::size_t top = 0;
  std::size_t left = 0;
  bool flip = false;
};

// Random (train) or centered (eval) crop of an h x w grid.
CropPlacement draw_crop(std::size_t height, std::size_t width, std::mt19937_64& rng, bool train,
                        const VisualAugmentOptions& options);

// Training: random crop + horizontal flip; evaluation: center crop. Either
// way the crop is then max-pooled down to options.output.
EventVoxelGrid augment_visual(const EventVoxelGrid& grid, std::mt19937_64& rng, bool train,
                              const VisualAugmentOptions& options = {});

EventVoxelGrid crop_grid(const EventVoxelGrid& grid, std::size_t top, std::size_t left, std::size_t size);
EventVoxelGrid flip_horizontal(const EventVoxelGrid& grid);
EventVoxelGrid downsample_grid(const EventVoxelGrid& grid, std::size_t factor);

// Little-endian binary container: 16-byte header ("CSEV", u16 version,
// u16 width, u16 height, u16 reserved, u32 count) followed by 13-byte
// records (u64 timestamp_us, u16 x, u16 y, u8 polarity).
void write_events_binary(const std::filesystem::path& path, const EventStream& stream);
EventStream read_events_binary(const std::filesystem::path& path);

// Text fallback: "# width=W height=H", a "timestamp_us,x,y,polarity" header,
// then one event per line.
void write_events_csv(const std::filesystem::path& path, const EventStream& stream);
EventStream read_events_csv(const std::filesystem::path& path);

// Picks the reader from the extension (.csv -> text, anything else binary).
EventStream read_events(const std::filesystem::path& path);

}  // namespace cuesnn

#endif  // CUESNN_EVENTS_HPP_
