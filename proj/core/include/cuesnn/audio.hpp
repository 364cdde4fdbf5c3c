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

#ifndef CUESNN_AUDIO_HPP_
#define CUESNN_AUDIO_HPP_

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "cuesnn/tensor.hpp"

namespace cuesnn {

inline constexpr std::uint32_t kSampleRate = 44100;

// Mono audio. Samples are stored as float; 16-bit PCM fits losslessly.
struct AudioWave {
  std::vector<float> samples;
  std::uint32_t sample_rate = kSampleRate;

  double duration_s() const { return static_cast<double>(samples.size()) / sample_rate; }
  friend bool operator==(const AudioWave&, const AudioWave&) = default;
};

// 16-bit PCM mono WAV. Samples are clamped to [-1, 1] on write.
void write_wav(const std::filesystem::path& path, const AudioWave& wave);
AudioWave read_wav(const std::filesystem::path& path);

// Linear interpolation onto the target rate.
AudioWave resample_linear(const AudioWave& wave, std::uint32_t target_rate);

double mean_power(const AudioWave& wave);

struct FbankOptions {
  std::size_t frame = 5292;  // 120 ms at 44.1 kHz
  std::size_t hop = 3528;    // 80 ms, so consecutive frames overlap by 40 ms
  std::size_t bins = 40;
  double log_floor = 1e-6;
};

// Number of raw frames for `length` samples. Audio shorter than one frame
// is zero-padded to a single frame.
std::size_t fbank_frame_count(std::size_t length, const FbankOptions& options = {});

// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Center frequencies of the triangular filters, evenly spaced on the mel
// scale between 0 Hz and Nyquist.
std::vector<double> mel_centers_hz(std::uint32_t sample_rate, const FbankOptions& options = {});

// Raw log mel energies [N, bins]: Hann window, power spectrum, mel
// filterbank, log(x + floor).
Tensor fbank_frames(const AudioWave& wave, const FbankOptions& options = {});

// [N, F] -> [T, F]: N > T keeps rows round(linspace(0, N-1, T)); otherwise
// the rows are copied and the remainder zero-padded.
Tensor standardize_frames(const Tensor& frames, std::size_t steps);

struct FbankFeatures {
  Tensor frames;  // [T, bins]
};

FbankFeatures fbank(const AudioWave& wave, std::size_t steps = 28, const FbankOptions& options = {});

struct AudioAugmentOptions {
  double polarity_probability = 0.8;
  double noise_probability = 0.1;
  double noise_snr_db = 30.0;
  double volume_probability = 0.3;
  double volume_low = 0.7;
  double volume_high = 1.3;
};

// Polarity inversion, white noise and volume change, each drawn
// independently. The result is clamped to [-1, 1].
AudioWave augment_audio(const AudioWave& wave, std::mt19937_64& rng, const AudioAugmentOptions& options = {});

// clean + noise scaled so that 10 log10(P_clean / P_noise) = snr_db. The
// noise is looped or truncated to the clean length.
AudioWave mix_at_snr(const AudioWave& clean, const AudioWave& noise, double snr_db);

}  // namespace cuesnn

#endif  // CUESNN_AUDIO_HPP_
