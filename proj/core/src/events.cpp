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

#include "cuesnn/events.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "cuesnn/errors.hpp"

namespace cuesnn {

static_assert(std::endian::native == std::endian::little, "event files are read and written as little-endian");

void EventStream::validate() const {
  for (std::size_t i = 0; i < events.size(); ++i) {
    const Event& e = events[i];
    if (i > 0 && e.timestamp_us < events[i - 1].timestamp_us) {
      throw ContractError(fmt::format("event {} has timestamp {} before its predecessor {}", i, e.timestamp_us,
                                      events[i - 1].timestamp_us));
    }
    if (e.x >= width || e.y >= height) {
      throw ContractError(fmt::format("event {} at ({}, {}) outside a {}x{} sensor", i, e.x, e.y, width, height));
    }
    if (e.polarity > 1) throw ContractError(fmt::format("event {} has polarity {}", i, static_cast<int>(e.polarity)));
  }
}

std::size_t event_bin(std::uint64_t ts, std::uint64_t t_first, std::uint64_t t_last, std::size_t steps) {
  if (steps == 0) throw ConfigError("event_bin: zero timesteps");
  if (ts <= t_first || t_last <= t_first) return 0;
  if (ts >= t_last) return steps - 1;
  const unsigned __int128 num = static_cast<unsigned __int128>(ts - t_first) * steps;
  const auto bin = static_cast<std::size_t>(num / (t_last - t_first));
  return std::min(bin, steps - 1);
}

EventVoxelGrid voxelize(const EventStream& stream, std::size_t steps, std::size_t height, std::size_t width,
                        const VoxelizeOptions& options) {
  if (stream.events.empty()) throw EmptyInputError("voxelize: empty event stream");
  if (steps == 0 || height == 0 || width == 0) throw ConfigError("voxelize: zero-sized target grid");
  if (stream.height % height != 0 || stream.width % width != 0) {
    throw DimensionError(fmt::format("voxelize: {}x{} target does not divide the {}x{} sensor", height, width,
                                     stream.height, stream.width));
  }
  stream.validate();
  const std::size_t fy = stream.height / height;
  const std::size_t fx = stream.width / width;
  const std::uint64_t t_first = stream.events.front().timestamp_us;
  const std::uint64_t t_last = stream.events.back().timestamp_us;
  SpikeTensor grid(Shape{steps, 2, height, width});
  auto cell = [&](std::size_t t, std::size_t p, std::size_t y, std::size_t x) {
    return ((t * 2 + p) * height + y) * width + x;
  };
  for (const Event& e : stream.events) {
    const std::size_t bin = event_bin(e.timestamp_us, t_first, t_last, steps);
    const std::size_t y = e.y / fy;
    const std::size_t x = e.x / fx;
    grid.set(cell(bin, e.polarity, y, x), true);
    for (std::size_t k = 1; k <= options.leak_future_bins && k <= bin; ++k) {
      grid.set(cell(bin - k, e.polarity, y, x), true);
    }
  }
  return EventVoxelGrid{std::move(grid)};
}

EventVoxelGrid crop_grid(const EventVoxelGrid& g, std::size_t top, std::size_t left, std::size_t size) {
  if (top + size > g.height() || left + size > g.width()) {
    throw DimensionError(fmt::format("crop of {}x{} at ({}, {}) exceeds a {}x{} grid", size, size, top, left,
                                     g.height(), g.width()));
  }
  const std::size_t steps = g.time_steps();
  SpikeTensor out(Shape{steps, 2, size, size});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
          out.set(((t * 2 + p) * size + y) * size + x, g.at(t, p, top + y, left + x));
  return EventVoxelGrid{std::move(out)};
}

EventVoxelGrid flip_horizontal(const EventVoxelGrid& g) {
  const std::size_t steps = g.time_steps(), h = g.height(), w = g.width();
  SpikeTensor out(g.grid.shape());
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out.set(((t * 2 + p) * h + y) * w + x, g.at(t, p, y, w - 1 - x));
  return EventVoxelGrid{std::move(out)};
}

EventVoxelGrid downsample_grid(const EventVoxelGrid& g, std::size_t factor) {
  if (factor == 0 || g.height() % factor != 0 || g.width() % factor != 0) {
    throw DimensionError(fmt::format("cannot downsample {}x{} by {}", g.height(), g.width(), factor));
  }
  if (factor == 1) return g;
  const std::size_t steps = g.time_steps(), h = g.height() / factor, w = g.width() / factor;
  SpikeTensor out(Shape{steps, 2, h, w});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t p = 0; p < 2; ++p)
      for (std::size_t y = 0; y < g.height(); ++y)
        for (std::size_t x = 0; x < g.width(); ++x)
          if (g.at(t, p, y, x)) out.set(((t * 2 + p) * h + y / factor) * w + x / factor, true);
  return EventVoxelGrid{std::move(out)};
}

CropPlacement draw_crop(std::size_t height, std::size_t width, std::mt19937_64& rng, bool train,
                        const VisualAugmentOptions& options) {
  const std::size_t c = options.crop;
  if (height < c || width < c) {
    throw DimensionError(fmt::format("{}x{} grid is smaller than the {}x{} crop", height, width, c, c));
  }
  if (options.output == 0 || c % options.output != 0) {
    throw ConfigError(fmt::format("crop {} is not a multiple of output {}", c, options.output));
  }
  CropPlacement p{(height - c) / 2, (width - c) / 2, false};
  if (train) {
    std::uniform_int_distribution<std::size_t> dy(0, height - c);
    std::uniform_int_distribution<std::size_t> dx(0, width - c);
    p.top = dy(rng);
    p.left = dx(rng);
    std::bernoulli_distribution coin(options.flip_probability);
    p.flip = coin(rng);
  }
  return p;
}

EventVoxelGrid augment_visual(const EventVoxelGrid& grid, std::mt19937_64& rng, bool train,
                              const VisualAugmentOptions& options) {
  const CropPlacement p = draw_crop(grid.height(), grid.width(), rng, train, options);
  EventVoxelGrid out = crop_grid(grid, p.top, p.left, options.crop);
  if (p.flip) out = flip_horizontal(out);
  return downsample_grid(out, options.crop / options.output);
}

namespace {

constexpr std::array<char, 4> kEventMagic{'C', 'S', 'E', 'V'};
constexpr std::uint16_t kEventVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError(fmt::format("{}: truncated event file", path.string()));
  return v;
}

}  // namespace

void write_events_binary(const std::filesystem::path& path, const EventStream& stream) {
  stream.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  os.write(kEventMagic.data(), kEventMagic.size());
  put<std::uint16_t>(os, kEventVersion);
  put<std::uint16_t>(os, stream.width);
  put<std::uint16_t>(os, stream.height);
  put<std::uint16_t>(os, 0);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(stream.events.size()));
  for (const Event& e : stream.events) {
    put(os, e.timestamp_us);
    put(os, e.x);
    put(os, e.y);
    put(os, e.polarity);
  }
  if (!os) throw IoError(fmt::format("write to {} failed", path.string()));
}

EventStream read_events_binary(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(fmt::format("cannot open {}", path.string()));
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kEventMagic) {
    throw IoError(fmt::format("{}: not an event file (bad magic)", path.string()));
  }
  const auto version = get<std::uint16_t>(is, path);
  if (version != kEventVersion) throw IoError(fmt::format("{}: unsupported event file version {}", path.string(), version));
  EventStream s;
  s.width = get<std::uint16_t>(is, path);
  s.height = get<std::uint16_t>(is, path);
  get<std::uint16_t>(is, path);
  const auto count = get<std::uint32_t>(is, path);
  s.events.resize(count);
  for (Event& e : s.events) {
    e.timestamp_us = get<std::uint64_t>(is, path);
    e.x = get<std::uint16_t>(is, path);
    e.y = get<std::uint16_t>(is, path);
    e.polarity = get<std::uint8_t>(is, path);
  }
  s.validate();
  return s;
}

void write_events_csv(const std::filesystem::path& path, const EventStream& stream) {
  stream.validate();
  std::ofstream os(path);
  if (!os) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  os << "# width=" << stream.width << " height=" << stream.height << "\n";
  os << "timestamp_us,x,y,polarity\n";
  for (const Event& e : stream.events) {
    os << e.timestamp_us << ',' << e.x << ',' << e.y << ',' << static_cast<int>(e.polarity) << '\n';
  }
}

EventStream read_events_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(fmt::format("cannot open {}", path.string()));
  EventStream s;
  std::string line;
  std::size_t lineno = 0;
  bool have_dims = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      unsigned w = 0, h = 0;
      if (std::sscanf(line.c_str(), "# width=%u height=%u", &w, &h) == 2) {
        s.width = static_cast<std::uint16_t>(w);
        s.height = static_cast<std::uint16_t>(h);
        have_dims = true;
      }
      continue;
    }
    if (line.rfind("timestamp_us", 0) == 0) continue;
    unsigned long long ts = 0;
    unsigned x = 0, y = 0, p = 0;
    if (std::sscanf(line.c_str(), "%llu,%u,%u,%u", &ts, &x, &y, &p) != 4) {
      throw IoError(fmt::format("{}:{}: malformed event line '{}'", path.string(), lineno, line));
    }
    s.events.push_back(Event{ts, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), static_cast<std::uint8_t>(p)});
  }
  if (!have_dims) throw IoError(fmt::format("{}: missing '# width=W height=H' line", path.string()));
  s.validate();
  return s;
}

EventStream read_events(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? read_events_csv(path) : read_events_binary(path);
}

}  // namespace cuesnn
