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

#include "cuesnn/audio.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <numbers>

#include <fftw3.h>
#include <fmt/format.h>

#include "cuesnn/errors.hpp"

namespace cuesnn {

static_assert(std::endian::native == std::endian::little, "WAV files are little-endian");

namespace {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError(fmt::format("{}: truncated WAV file", path.string()));
  return v;
}

}  // namespace

void write_wav(const std::filesystem::path& path, const AudioWave& wave) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  const auto data_bytes = static_cast<std::uint32_t>(wave.samples.size() * 2);
  os.write("RIFF", 4);
  put<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put<std::uint32_t>(os, 16);
  put<std::uint16_t>(os, 1);  // PCM
  put<std::uint16_t>(os, 1);  // mono
  put<std::uint32_t>(os, wave.sample_rate);
  put<std::uint32_t>(os, wave.sample_rate * 2);
  put<std::uint16_t>(os, 2);
  put<std::uint16_t>(os, 16);
  os.write("data", 4);
  put<std::uint32_t>(os, data_bytes);
  for (float s : wave.samples) {
    const double c = std::clamp(static_cast<double>(s), -1.0, 1.0);
    put<std::int16_t>(os, static_cast<std::int16_t>(std::lround(c * 32767.0)));
  }
  if (!os) throw IoError(fmt::format("write to {} failed", path.string()));
}

AudioWave read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(fmt::format("cannot open {}", path.string()));
  std::array<char, 4> tag{};
  auto read_tag = [&] {
    if (!is.read(tag.data(), 4)) throw IoError(fmt::format("{}: truncated WAV file", path.string()));
    return std::string(tag.data(), 4);
  };
  if (read_tag() != "RIFF") throw IoError(fmt::format("{}: not a RIFF file", path.string()));
  get<std::uint32_t>(is, path);
  if (read_tag() != "WAVE") throw IoError(fmt::format("{}: not a WAVE file", path.string()));
  AudioWave wave;
  bool have_fmt = false;
  while (true) {
    const std::string id = read_tag();
    const auto size = get<std::uint32_t>(is, path);
    if (id == "fmt ") {
      const auto format = get<std::uint16_t>(is, path);
      const auto channels = get<std::uint16_t>(is, path);
      wave.sample_rate = get<std::uint32_t>(is, path);
      get<std::uint32_t>(is, path);
      get<std::uint16_t>(is, path);
      const auto bits = get<std::uint16_t>(is, path);
      if (format != 1 || channels != 1 || bits != 16) {
        throw IoError(fmt::format("{}: only 16-bit PCM mono is supported (format {}, {} channels, {} bits)",
                                  path.string(), format, channels, bits));
      }
      is.ignore(size - 16);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw IoError(fmt::format("{}: data chunk before fmt chunk", path.string()));
      wave.samples.resize(size / 2);
      for (float& s : wave.samples) s = static_cast<float>(get<std::int16_t>(is, path) / 32767.0);
      return wave;
    } else {
      is.ignore(size + (size & 1));
    }
  }
}

AudioWave resample_linear(const AudioWave& wave, std::uint32_t target_rate) {
  if (target_rate == 0 || wave.sample_rate == 0) throw ConfigError("resample_linear: zero sample rate");
  if (target_rate == wave.sample_rate || wave.samples.empty()) return AudioWave{wave.samples, target_rate};
  const std::size_t n_in = wave.samples.size();
  const auto n_out = static_cast<std::size_t>(
      std::max<std::uint64_t>(1, static_cast<std::uint64_t>(n_in) * target_rate / wave.sample_rate));
  AudioWave out{std::vector<float>(n_out), target_rate};
  const double step = static_cast<double>(wave.sample_rate) / target_rate;
  for (std::size_t i = 0; i < n_out; ++i) {
    const double pos = i * step;
    const auto i0 = std::min(static_cast<std::size_t>(pos), n_in - 1);
    const std::size_t i1 = std::min(i0 + 1, n_in - 1);
    const double frac = pos - static_cast<double>(i0);
    out.samples[i] = static_cast<float>((1.0 - frac) * wave.samples[i0] + frac * wave.samples[i1]);
  }
  return out;
}

double mean_power(const AudioWave& wave) {
  if (wave.samples.empty()) return 0.0;
  double acc = 0.0;
  for (float s : wave.samples) acc += static_cast<double>(s) * s;
  return acc / static_cast<double>(wave.samples.size());
}

std::size_t fbank_frame_count(std::size_t length, const FbankOptions& o) {
  if (length <= o.frame) return 1;
  return (length - o.frame) / o.hop + 1;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

// bins + 2 edge frequencies evenly spaced in mel.
std::vector<double> mel_edges_hz(std::uint32_t rate, std::size_t bins) {
  const double top = hz_to_mel(rate / 2.0);
  std::vector<double> edges(bins + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(top * i / static_cast<double>(bins + 1));
  return edges;
}

struct FftwPlan {
  std::size_t n;
  double* in;
  fftw_complex* out;
  fftw_plan plan;

  explicit FftwPlan(std::size_t size)
      : n(size),
        in(fftw_alloc_real(size)),
        out(fftw_alloc_complex(size / 2 + 1)),
        plan(fftw_plan_dft_r2c_1d(static_cast<int>(size), in, out, FFTW_ESTIMATE)) {}
  ~FftwPlan() {
    fftw_destroy_plan(plan);
    fftw_free(in);
    fftw_free(out);
  }
  FftwPlan(const FftwPlan&) = delete;
  FftwPlan& operator=(const FftwPlan&) = delete;
};

FftwPlan& plan_for(std::size_t n) {
  // FFTW planning is not thread-safe; one plan per thread and size.
  thread_local std::unique_ptr<FftwPlan> cached;
  if (!cached || cached->n != n) cached = std::make_unique<FftwPlan>(n);
  return *cached;
}

}  // namespace

std::vector<double> mel_centers_hz(std::uint32_t sample_rate, const FbankOptions& o) {
  const auto edges = mel_edges_hz(sample_rate, o.bins);
  return {edges.begin() + 1, edges.end() - 1};
}

Tensor fbank_frames(const AudioWave& wave, const FbankOptions& o) {
  if (wave.samples.empty()) throw EmptyInputError("fbank: empty audio");
  if (wave.sample_rate != kSampleRate) {
    throw ContractError(fmt::format("fbank: expected {} Hz audio, got {} Hz", kSampleRate, wave.sample_rate));
  }
  const std::size_t n_frames = fbank_frame_count(wave.samples.size(), o);
  const std::size_t n_fft = o.frame;
  const std::size_t n_freq = n_fft / 2 + 1;

  std::vector<double> window(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(n_fft - 1));
  }

  // Dense [bins, n_freq] filter weights; the filters are narrow so only the
  // nonzero span of each row is visited.
  const auto edges = mel_edges_hz(wave.sample_rate, o.bins);
  std::vector<std::vector<std::pair<std::size_t, double>>> filters(o.bins);
  for (std::size_t m = 0; m < o.bins; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < n_freq; ++k) {
      const double f = static_cast<double>(k) * wave.sample_rate / static_cast<double>(n_fft);
      double w = 0.0;
      if (f > lo && f <= mid) {
        w = (f - lo) / (mid - lo);
      } else if (f > mid && f < hi) {
        w = (hi - f) / (hi - mid);
      }
      if (w > 0.0) filters[m].emplace_back(k, w);
    }
  }

  FftwPlan& plan = plan_for(n_fft);
  std::vector<double> power(n_freq);
  Tensor out(Shape{n_frames, o.bins});
  auto dst = out.values();
  for (std::size_t f = 0; f < n_frames; ++f) {
    const std::size_t start = f * o.hop;
    for (std::size_t i = 0; i < n_fft; ++i) {
      const std::size_t idx = start + i;
      plan.in[i] = idx < wave.samples.size() ? wave.samples[idx] * window[i] : 0.0;
    }
    fftw_execute(plan.plan);
    for (std::size_t k = 0; k < n_freq; ++k) power[k] = plan.out[k][0] * plan.out[k][0] + plan.out[k][1] * plan.out[k][1];
    for (std::size_t m = 0; m < o.bins; ++m) {
      double e = 0.0;
      for (const auto& [k, w] : filters[m]) e += w * power[k];
      dst[f * o.bins + m] = std::log(e + o.log_floor);
    }
  }
  return out;
}

Tensor standardize_frames(const Tensor& frames, std::size_t steps) {
  if (frames.rank() != 2) throw DimensionError(fmt::format("standardize_frames: expected [N, F], got {}", shape_str(frames.shape())));
  const std::size_t n = frames.dim(0), feat = frames.dim(1);
  if (n == 0) throw EmptyInputError("standardize_frames: no frames");
  Tensor out(Shape{steps, feat});
  auto dst = out.values();
  const auto& src = frames.values();
  for (std::size_t t = 0; t < steps; ++t) {
    std::size_t row = t;
    if (n > steps) {
      row = steps == 1 ? 0
                       : static_cast<std::size_t>(std::lround(static_cast<double>(t) * static_cast<double>(n - 1) /
                                                              static_cast<double>(steps - 1)));
    } else if (t >= n) {
      continue;
    }
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(row * feat), feat, dst.begin() + static_cast<std::ptrdiff_t>(t * feat));
  }
  return out;
}

FbankFeatures fbank(const AudioWave& wave, std::size_t steps, const FbankOptions& options) {
  return FbankFeatures{standardize_frames(fbank_frames(wave, options), steps)};
}

AudioWave augment_audio(const AudioWave& wave, std::mt19937_64& rng, const AudioAugmentOptions& o) {
  AudioWave out = wave;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool invert = unit(rng) < o.polarity_probability;
  const bool noise = unit(rng) < o.noise_probability;
  const bool volume = unit(rng) < o.volume_probability;
  if (invert) {
    for (float& s : out.samples) s = -s;
  }
  if (noise) {
    const double p = mean_power(out);
    if (p > 0.0) {
      const double sigma = std::sqrt(p / std::pow(10.0, o.noise_snr_db / 10.0));
      std::normal_distribution<double> gauss(0.0, sigma);
      for (float& s : out.samples) s = static_cast<float>(s + gauss(rng));
    }
  }
  if (volume) {
    std::uniform_real_distribution<double> gain(o.volume_low, o.volume_high);
    const double g = gain(rng);
    for (float& s : out.samples) s = static_cast<float>(s * g);
  }
  if (noise || volume) {
    for (float& s : out.samples) s = std::clamp(s, -1.0f, 1.0f);
  }
  return out;
}

AudioWave mix_at_snr(const AudioWave& clean, const AudioWave& noise, double snr_db) {
  if (clean.sample_rate != noise.sample_rate) {
    throw ContractError(fmt::format("mix_at_snr: sample rates differ ({} vs {})", clean.sample_rate, noise.sample_rate));
  }
  if (clean.samples.empty() || noise.samples.empty()) throw DegenerateInputError("mix_at_snr: empty input");
  const std::size_t n = clean.samples.size();
  std::vector<double> fitted(n);
  for (std::size_t i = 0; i < n; ++i) fitted[i] = noise.samples[i % noise.samples.size()];
  double p_noise = 0.0;
  for (double v : fitted) p_noise += v * v;
  p_noise /= static_cast<double>(n);
  const double p_clean = mean_power(clean);
  if (p_clean <= 0.0 || p_noise <= 0.0) {
    throw DegenerateInputError(fmt::format("mix_at_snr: zero-power input (clean {}, noise {})", p_clean, p_noise));
  }
  const double gain = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
  AudioWave out{std::vector<float>(n), clean.sample_rate};
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(clean.samples[i] + gain * fitted[i]);
  return out;
}

}  // namespace cuesnn
