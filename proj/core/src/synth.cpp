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

#include "cuesnn/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "cuesnn/errors.hpp"

namespace cuesnn {

void SynthSpec::validate() const {
  if (num_classes < 4) throw ConfigError(fmt::format("synth.num_classes must be at least 4, got {}", num_classes));
  if (num_classes % 2 != 0) throw ConfigError(fmt::format("synth.num_classes must be even, got {}", num_classes));
  // The fastest mouth rhythm has to stay resolvable at the configured number of timesteps.
  if (num_classes > 2 * (time_steps / 4)) {
    throw ConfigError(fmt::format("synth.num_classes {} is too many for {} timesteps", num_classes, time_steps));
  }
  if (train_per_class == 0 && test_per_class == 0) throw ConfigError("synth: no samples requested");
  if (time_steps == 0) throw ConfigError("synth.time_steps must be positive");
  if (grid < 32) throw ConfigError(fmt::format("synth.grid must be at least 32, got {}", grid));
  if (!(duration_s > 0.0) || duration_s > 60.0) throw ConfigError(fmt::format("synth.duration_s out of range: {}", duration_s));
  if (sample_rate != kSampleRate) throw ConfigError(fmt::format("synth.sample_rate must be {}", kSampleRate));
  if (snr_db && !std::isfinite(*snr_db)) throw ConfigError("synth.snr_db must be finite or null");
  if (!(motion_px >= 0.0) || motion_px > grid / 3.0) throw ConfigError(fmt::format("synth.motion_px out of range: {}", motion_px));
  if (!(noise_events_per_s >= 0.0)) throw ConfigError("synth.noise_events_per_s must be non-negative");
}

nlohmann::json SynthSpec::to_json() const {
  return {{"num_classes", num_classes},
          {"train_per_class", train_per_class},
          {"test_per_class", test_per_class},
          {"time_steps", time_steps},
          {"grid", grid},
          {"duration_s", duration_s},
          {"sample_rate", sample_rate},
          {"snr_db", snr_db ? nlohmann::json(*snr_db) : nlohmann::json(nullptr)},
          {"background_snr_db", background_snr_db},
          {"motion_px", motion_px},
          {"noise_events_per_s", noise_events_per_s}};
}

SynthSpec SynthSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synth spec must be a JSON object");
  SynthSpec s;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "num_classes") s.num_classes = value.get<std::size_t>();
      else if (key == "train_per_class") s.train_per_class = value.get<std::size_t>();
      else if (key == "test_per_class") s.test_per_class = value.get<std::size_t>();
      else if (key == "time_steps") s.time_steps = value.get<std::size_t>();
      else if (key == "grid") s.grid = value.get<std::uint16_t>();
      else if (key == "duration_s") s.duration_s = value.get<double>();
      else if (key == "sample_rate") s.sample_rate = value.get<std::uint32_t>();
      else if (key == "snr_db") s.snr_db = value.is_null() ? std::nullopt : std::optional<double>(value.get<double>());
      else if (key == "background_snr_db") s.background_snr_db = value.get<double>();
      else if (key == "motion_px") s.motion_px = value.get<double>();
      else if (key == "noise_events_per_s") s.noise_events_per_s = value.get<double>();
      else throw ConfigError(fmt::format("synth spec: unknown field '{}'", key));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(fmt::format("synth spec field '{}': {}", key, e.what()));
    }
  }
  s.validate();
  return s;
}

std::size_t split_size(const SynthSpec& spec, Split split) {
  return spec.num_classes * (split == Split::kTrain ? spec.train_per_class : spec.test_per_class);
}

namespace {

constexpr double kMicroStepUs = 5000.0;

// Mouth opening at normalized time tau. Every pair shares one slow
// open-close cycle in the first half of the clip; in the second half pair j
// makes j + 1 cycles.
double mouth_opening(double tau, std::size_t pair, double rate_jitter) {
  if (tau < 0.5) return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * tau / 0.5));
  const double cycles = static_cast<double>(pair + 1) * rate_jitter;
  return 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * cycles * (tau - 0.5) / 0.5));
}

struct Mouth {
  double cx, cy, half_width, half_height;

  bool covers(int x, int y) const {
    const double dx = (x - cx) / half_width;
    const double dy = (y - cy) / half_height;
    return dx * dx + dy * dy <= 1.0;
  }
};

std::mt19937_64 sample_rng(std::uint64_t seed, Split split, std::size_t index, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split == Split::kTrain ? 1 : 2), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(static_cast<std::uint64_t>(index) >> 32), stream};
  return std::mt19937_64(seq);
}

}  // namespace

EventStream synth_events(const SynthSpec& spec, std::size_t pair, std::mt19937_64& rng) {
  const std::size_t pairs = spec.num_pairs();
  if (pair >= pairs) throw ConfigError(fmt::format("synth_events: pair {} out of range [0, {})", pair, pairs));
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const double g = spec.grid;
  const double cx = g / 2.0 + 3.0 * jitter(rng);
  const double cy = g / 2.0 + 3.0 * jitter(rng);
  const double half_width = g / 6.0 * (1.0 + 0.1 * jitter(rng));
  const double closed = 2.0 + 0.5 * jitter(rng);
  const double amp = spec.motion_px * (1.0 + 0.1 * jitter(rng));
  const double rate = 1.0 + 0.04 * jitter(rng);

  const auto duration_us = static_cast<std::uint64_t>(std::llround(spec.duration_s * 1e6));
  const auto steps = static_cast<std::size_t>(std::max(1.0, std::floor(duration_us / kMicroStepUs)));
  const int grid = spec.grid;

  EventStream s;
  s.width = spec.grid;
  s.height = spec.grid;
  auto mouth_at = [&](std::size_t m) {
    const double tau = static_cast<double>(m) / static_cast<double>(steps);
    return Mouth{cx, cy, half_width, closed + 0.5 * amp * mouth_opening(tau, pair, rate)};
  };
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - half_width - 1.0)));
  const int x1 = std::min(grid - 1, static_cast<int>(std::ceil(cx + half_width + 1.0)));
  Mouth prev = mouth_at(0);
  for (std::size_t m = 1; m <= steps; ++m) {
    const Mouth cur = mouth_at(m);
    const auto ts = static_cast<std::uint64_t>(std::llround(static_cast<double>(m) * duration_us / static_cast<double>(steps)));
    const double reach = std::max(prev.half_height, cur.half_height) + 1.0;
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - reach)));
    const int y1 = std::min(grid - 1, static_cast<int>(std::ceil(cy + reach)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const bool was = prev.covers(x, y);
        const bool now = cur.covers(x, y);
        if (was != now) {
          s.events.push_back(Event{ts, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), static_cast<std::uint8_t>(now)});
        }
      }
    }
    prev = cur;
  }

  // Sensor noise; the first and last events pin the clip span.
  std::uniform_int_distribution<int> px(0, grid - 1);
  std::uniform_int_distribution<std::uint64_t> when(0, duration_us);
  std::bernoulli_distribution pol(0.5);
  const auto n_noise = static_cast<std::size_t>(spec.noise_events_per_s * spec.duration_s);
  for (std::size_t i = 0; i < n_noise + 2; ++i) {
    const std::uint64_t ts = i == 0 ? 0 : (i == 1 ? duration_us : when(rng));
    s.events.push_back(Event{ts, static_cast<std::uint16_t>(px(rng)), static_cast<std::uint16_t>(px(rng)),
                             static_cast<std::uint8_t>(pol(rng))});
  }
  std::stable_sort(s.events.begin(), s.events.end(),
                   [](const Event& a, const Event& b) { return a.timestamp_us < b.timestamp_us; });
  return s;
}

AudioWave synth_tone(const SynthSpec& spec, std::size_t label, std::mt19937_64& rng) {
  if (label >= spec.num_classes) throw ConfigError(fmt::format("synth_tone: label {} out of range", label));
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  const double k = static_cast<double>(label);
  const double f1 = (400.0 + 200.0 * k) * (1.0 + 0.01 * jitter(rng));
  const double f2 = (3000.0 + 500.0 * k) * (1.0 + 0.01 * jitter(rng));
  const double a2 = 0.6 + 0.2 * jitter(rng);
  const double ph1 = std::numbers::pi * jitter(rng);
  const double ph2 = std::numbers::pi * jitter(rng);
  const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate));
  AudioWave w{std::vector<float>(n), spec.sample_rate};
  const double rate = spec.sample_rate;
  const double ramp = 0.01 * rate;  // 10 ms fade in/out
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    const double env = std::min({1.0, static_cast<double>(i) / ramp, static_cast<double>(n - 1 - i) / ramp});
    const double v = std::sin(2.0 * std::numbers::pi * f1 * t + ph1) + a2 * std::sin(2.0 * std::numbers::pi * f2 * t + ph2);
    w.samples[i] = static_cast<float>(0.3 * env * v);
  }
  return w;
}

AvSample synth_sample(const SynthSpec& spec, std::uint64_t seed, Split split, std::size_t index) {
  spec.validate();
  if (index >= split_size(spec, split)) throw ConfigError(fmt::format("synth_sample: index {} out of range", index));
  AvSample out;
  out.label = static_cast<int>(index % spec.num_classes);
  const auto label = static_cast<std::size_t>(out.label);

  // Vision draws from its own stream so the two classes of a pair are
  // identically distributed.
  auto vis_rng = sample_rng(seed, split, index, 1);
  out.events = synth_events(spec, label / 2, vis_rng);

  auto aud_rng = sample_rng(seed, split, index, 2);
  AudioWave target = synth_tone(spec, label, aud_rng);
  if (spec.snr_db) {
    std::uniform_int_distribution<std::size_t> other(0, spec.num_classes - 3);
    std::size_t k = other(aud_rng);
    if (k >= (label / 2) * 2) k += 2;  // skip both classes of the target's pair
    const AudioWave talker = synth_tone(spec, k, aud_rng);
    target = mix_at_snr(target, talker, *spec.snr_db);
  }
  std::normal_distribution<double> gauss(0.0, 1.0);
  AudioWave floor_noise{std::vector<float>(target.samples.size()), target.sample_rate};
  for (float& s : floor_noise.samples) s = static_cast<float>(gauss(aud_rng));
  out.audio = mix_at_snr(target, floor_noise, spec.background_snr_db);
  std::uniform_real_distribution<double> gain(0.5, 1.0);
  const double g = gain(aud_rng);
  for (float& s : out.audio.samples) s = std::clamp(static_cast<float>(s * g), -1.0f, 1.0f);
  return out;
}

AvDataset synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  AvDataset d;
  d.train.reserve(split_size(spec, Split::kTrain));
  for (std::size_t i = 0; i < split_size(spec, Split::kTrain); ++i) d.train.push_back(synth_sample(spec, seed, Split::kTrain, i));
  for (std::size_t i = 0; i < split_size(spec, Split::kTest); ++i) d.test.push_back(synth_sample(spec, seed, Split::kTest, i));
  return d;
}

}  // namespace cuesnn
