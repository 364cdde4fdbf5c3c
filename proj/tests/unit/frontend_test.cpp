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

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "cuesnn/audio.hpp"
#include "cuesnn/dataset.hpp"
#include "cuesnn/errors.hpp"
#include "cuesnn/events.hpp"
#include "cuesnn/synth.hpp"

namespace cuesnn {
namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cuesnn_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

EventStream random_stream(std::mt19937_64& rng, std::size_t n, std::uint16_t side = 96) {
  EventStream s;
  s.width = s.height = side;
  std::uniform_int_distribution<int> pix(0, side - 1);
  std::uniform_int_distribution<std::uint64_t> dt(0, 400);
  std::uint64_t ts = 1000;
  for (std::size_t i = 0; i < n; ++i) {
    ts += dt(rng);
    s.events.push_back({ts, static_cast<std::uint16_t>(pix(rng)), static_cast<std::uint16_t>(pix(rng)),
                        static_cast<std::uint8_t>(rng() & 1)});
  }
  return s;
}

AudioWave tone(double hz, double seconds, double amp = 0.5) {
  AudioWave w;
  w.samples.resize(static_cast<std::size_t>(seconds * kSampleRate));
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    w.samples[i] = static_cast<float>(amp * std::sin(2 * std::numbers::pi * hz * i / kSampleRate));
  }
  return w;
}

// ---- events ----

TEST(EventBin, Examples) {
  EXPECT_EQ(event_bin(100, 100, 1100, 28), 0u);
  EXPECT_EQ(event_bin(600, 100, 1100, 28), 14u);
  EXPECT_EQ(event_bin(1100, 100, 1100, 28), 27u);
  EXPECT_EQ(event_bin(1099, 100, 1100, 28), 27u);
}

TEST(EventBin, PartitionsTheSpan) {
  std::mt19937_64 rng(1);
  const std::uint64_t t0 = 12345, t1 = 12345 + 999'983;
  std::size_t prev = 0;
  for (std::uint64_t ts = t0; ts <= t1; ts += 997) {
    const std::size_t b = event_bin(ts, t0, t1, 28);
    ASSERT_LT(b, 28u);
    ASSERT_GE(b, prev);
    // floor((ts - t0) * T / span), computed in floating point
    const double ref = std::floor(static_cast<double>(ts - t0) * 28.0 / static_cast<double>(t1 - t0));
    ASSERT_EQ(b, std::min<std::size_t>(27, static_cast<std::size_t>(ref)));
    prev = b;
  }
}

TEST(Voxelize, BinaryOccupancyAndErrors) {
  EventStream s;
  s.width = s.height = 4;
  s.events = {{0, 1, 1, 1}, {10, 1, 1, 1}, {20, 1, 1, 1}, {100, 3, 2, 0}};
  const EventVoxelGrid g = voxelize(s, 4, 4, 4);
  EXPECT_TRUE(g.at(0, 1, 1, 1));
  EXPECT_TRUE(g.at(3, 0, 2, 3));
  EXPECT_EQ(g.grid.count_ones(), 2u);
  const EventVoxelGrid half = voxelize(s, 4, 2, 2);
  EXPECT_TRUE(half.at(0, 1, 0, 0));
  EXPECT_TRUE(half.at(3, 0, 1, 1));
  EXPECT_THROW(voxelize(EventStream{{}, 4, 4}, 4, 4, 4), EmptyInputError);
  EXPECT_THROW(voxelize(s, 4, 3, 3), DimensionError);
}

TEST(Voxelize, LeakOptionCopiesIntoEarlierBins) {
  EventStream s;
  s.width = s.height = 2;
  s.events = {{0, 0, 0, 0}, {100, 1, 1, 1}};
  const EventVoxelGrid g = voxelize(s, 4, 2, 2, VoxelizeOptions{1});
  EXPECT_TRUE(g.at(3, 1, 1, 1));
  EXPECT_TRUE(g.at(2, 1, 1, 1));
  EXPECT_FALSE(g.at(1, 1, 1, 1));
}

TEST(EventStream, ValidateRejectsDisorder) {
  EventStream s;
  s.width = s.height = 4;
  s.events = {{10, 0, 0, 0}, {5, 0, 0, 0}};
  EXPECT_THROW(s.validate(), ContractError);
  s.events = {{1, 4, 0, 0}};
  EXPECT_THROW(s.validate(), ContractError);
}

TEST(EventFiles, BinaryAndCsvRoundTrip) {
  std::mt19937_64 rng(2);
  const EventStream s = random_stream(rng, 500);
  const fs::path dir = scratch_dir("events");
  write_events_binary(dir / "a.csev", s);
  write_events_csv(dir / "a.csv", s);
  EXPECT_EQ(read_events(dir / "a.csev"), s);
  EXPECT_EQ(read_events(dir / "a.csv"), s);
  EXPECT_EQ(fs::file_size(dir / "a.csev"), 16u + 13u * 500u);
  std::ifstream is(dir / "a.csev", std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  EXPECT_EQ(std::string(magic, 4), "CSEV");
  fs::remove_all(dir);
}

TEST(EventFiles, TruncatedBinaryIsAnError) {
  std::mt19937_64 rng(3);
  const fs::path dir = scratch_dir("trunc");
  write_events_binary(dir / "a.csev", random_stream(rng, 10));
  fs::resize_file(dir / "a.csev", 16 + 13 * 5 + 2);
  EXPECT_THROW(read_events(dir / "a.csev"), IoError);
  fs::remove_all(dir);
}

// ---- visual augmentation ----

TEST(AugmentVisual, EvalIsCenteredAndDeterministic) {
  std::mt19937_64 rng(4);
  const EventVoxelGrid g = voxelize(random_stream(rng, 3000), 5, 96, 96);
  std::mt19937_64 r1(1), r2(2);
  const EventVoxelGrid a = augment_visual(g, r1, false);
  const EventVoxelGrid b = augment_visual(g, r2, false);
  EXPECT_EQ(a.grid, b.grid);
  EXPECT_EQ(a.grid.shape(), (Shape{5, 2, 44, 44}));
  const CropPlacement c = draw_crop(96, 96, r1, false, {});
  EXPECT_EQ(c.top, 4u);
  EXPECT_EQ(c.left, 4u);
  EXPECT_FALSE(c.flip);
  EXPECT_EQ(a.grid, downsample_grid(crop_grid(g, 4, 4, 88), 2).grid);
}

TEST(AugmentVisual, FlipIsAnInvolution) {
  std::mt19937_64 rng(5);
  const EventVoxelGrid g = voxelize(random_stream(rng, 800, 8), 3, 8, 8);
  EXPECT_EQ(flip_horizontal(flip_horizontal(g)).grid, g.grid);
  EXPECT_NE(flip_horizontal(g).grid, g.grid);
}

TEST(AugmentVisual, SeededTrainCropsReproduce) {
  std::mt19937_64 a(77), b(77);
  for (int i = 0; i < 50; ++i) {
    const CropPlacement x = draw_crop(96, 96, a, true, {});
    const CropPlacement y = draw_crop(96, 96, b, true, {});
    EXPECT_EQ(x.top, y.top);
    EXPECT_EQ(x.left, y.left);
    EXPECT_EQ(x.flip, y.flip);
    EXPECT_LE(x.top, 8u);
    EXPECT_LE(x.left, 8u);
  }
}

TEST(AugmentVisual, TooSmallInputIsRejected) {
  std::mt19937_64 rng(6);
  const EventVoxelGrid g = voxelize(random_stream(rng, 100, 64), 3, 64, 64);
  EXPECT_THROW(augment_visual(g, rng, false), DimensionError);
}

// The per-event fast path in the data pipeline must equal the grid-level
// composition voxelize -> center sensor crop -> augment.
TEST(VisualInput, EqualsComposedGridPath) {
  std::mt19937_64 rng(7);
  DataPipeline p;
  for (std::size_t leak : {0u, 1u}) {
    p.voxelize.leak_future_bins = leak;
    for (int trial = 0; trial < 6; ++trial) {
      PreparedSample s;
      s.events = random_stream(rng, 4000, trial % 2 == 0 ? 96 : 128);
      const bool train = trial >= 2;
      std::mt19937_64 r1(trial), r2(trial);
      const auto fast = visual_input(s, p, train ? &r1 : nullptr);
      const EventVoxelGrid ref = augment_visual(sensor_grid(s.events, p), r2, train, p.visual);
      const std::size_t side = 44;
      for (std::size_t t = 0; t < 28; ++t)
        for (std::size_t y = 0; y < side; ++y)
          for (std::size_t x = 0; x < side; ++x)
            for (std::size_t c = 0; c < 2; ++c) {
              ASSERT_EQ(fast[((t * side + y) * side + x) * 2 + c] != 0.0, ref.at(t, c, y, x))
                  << "leak " << leak << " trial " << trial << " at " << t << "," << c << "," << y << "," << x;
            }
    }
  }
}

// ---- audio ----

TEST(Fbank, FrameCountArithmetic) {
  EXPECT_EQ(fbank_frame_count(44100), 12u);
  for (std::size_t len : {5292u, 5293u, 8819u, 8820u, 12348u, 100000u}) {
    EXPECT_EQ(fbank_frame_count(len), (len - 5292) / 3528 + 1) << len;
  }
  EXPECT_EQ(fbank_frame_count(100), 1u);
}

TEST(Fbank, OneSecondGivesTwelveFramesPaddedToTwentyEight) {
  const AudioWave w = tone(440.0, 1.0);
  EXPECT_EQ(fbank_frames(w).dim(0), 12u);
  const FbankFeatures f = fbank(w, 28);
  EXPECT_EQ(f.frames.shape(), (Shape{28, 40}));
  for (std::size_t i = 12 * 40; i < 28 * 40; ++i) EXPECT_EQ(f.frames.at(i), 0.0);
  for (std::size_t i = 0; i < 12 * 40; ++i) EXPECT_NE(f.frames.at(i), 0.0);
}

TEST(Fbank, SilenceIsLogFloor) {
  AudioWave w;
  w.samples.assign(20000, 0.0f);
  const Tensor f = fbank_frames(w);
  for (double v : f.values()) EXPECT_DOUBLE_EQ(v, std::log(1e-6));
}

TEST(Fbank, ToneLandsInNearestCenterBin) {
  const auto centers = mel_centers_hz(kSampleRate);
  ASSERT_EQ(centers.size(), 40u);
  for (double hz : {1000.0, 440.0, 3000.0}) {
    std::size_t nearest = 0;
    for (std::size_t m = 1; m < 40; ++m)
      if (std::abs(centers[m] - hz) < std::abs(centers[nearest] - hz)) nearest = m;
    const Tensor f = fbank_frames(tone(hz, 0.5));
    for (std::size_t fr = 1; fr + 1 < f.dim(0); ++fr) {
      std::size_t best = 0;
      for (std::size_t m = 1; m < 40; ++m)
        if (f.at(fr * 40 + m) > f.at(fr * 40 + best)) best = m;
      EXPECT_EQ(best, nearest) << hz << " Hz frame " << fr;
    }
  }
}

TEST(Fbank, MelScaleIsHtk) {
  EXPECT_NEAR(hz_to_mel(1000.0), 2595.0 * std::log10(1.0 + 1000.0 / 700.0), 1e-12);
  EXPECT_NEAR(mel_to_hz(hz_to_mel(1234.5)), 1234.5, 1e-9);
  const auto c = mel_centers_hz(kSampleRate);
  const double top = hz_to_mel(kSampleRate / 2.0);
  for (std::size_t m = 0; m < 40; ++m) EXPECT_NEAR(hz_to_mel(c[m]), top * (m + 1) / 41.0, 1e-9);
}

// One frame recomputed with a direct O(N^2) DFT and filters built from the
// HTK formula.
TEST(Fbank, MatchesNaiveDft) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 0.2);
  AudioWave w;
  w.samples.resize(9000);
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    w.samples[i] = static_cast<float>(0.3 * std::sin(2 * std::numbers::pi * 700.0 * i / kSampleRate) + n(rng));
  }
  const Tensor f = fbank_frames(w);
  const std::size_t N = 5292, frame = 1, start = frame * 3528;
  std::vector<double> x(N);
  for (std::size_t i = 0; i < N; ++i) {
    const double win = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * i / (N - 1)));
    x[i] = (start + i < w.samples.size() ? w.samples[start + i] : 0.0) * win;
  }
  std::vector<double> power(N / 2 + 1);
  for (std::size_t k = 0; k <= N / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < N; ++i) acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * i % N) / N);
    power[k] = std::norm(acc);
  }
  const double top = 2595.0 * std::log10(1.0 + (kSampleRate / 2.0) / 700.0);
  auto edge = [&](std::size_t i) { return 700.0 * (std::pow(10.0, top * i / 41.0 / 2595.0) - 1.0); };
  for (std::size_t m = 0; m < 40; ++m) {
    const double lo = edge(m), mid = edge(m + 1), hi = edge(m + 2);
    double e = 0.0;
    for (std::size_t k = 0; k <= N / 2; ++k) {
      const double hz = double(k) * kSampleRate / N;
      if (hz > lo && hz <= mid) e += power[k] * (hz - lo) / (mid - lo);
      if (hz > mid && hz < hi) e += power[k] * (hi - hz) / (hi - mid);
    }
    EXPECT_NEAR(f.at(frame * 40 + m), std::log(e + 1e-6), 1e-7) << "bin " << m;
  }
}

TEST(Fbank, EmptyAudioIsAnError) { EXPECT_THROW(fbank_frames(AudioWave{}), EmptyInputError); }

TEST(StandardizeFrames, Rules) {
  std::vector<double> v(28 * 2);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i + 1);
  const Tensor same({28, 2}, v);
  const Tensor out = standardize_frames(same, 28);
  EXPECT_TRUE(std::equal(v.begin(), v.end(), out.values().begin()));

  std::vector<double> rows(55);
  for (std::size_t i = 0; i < 55; ++i) rows[i] = static_cast<double>(i);
  const Tensor down = standardize_frames(Tensor({55, 1}, rows), 28);
  ASSERT_EQ(down.shape(), (Shape{28, 1}));
  for (std::size_t t = 0; t < 28; ++t) EXPECT_EQ(down.at(t), static_cast<double>(2 * t));

  // round(linspace(0, N-1, T)) for a less tidy N
  std::vector<double> r40(40);
  for (std::size_t i = 0; i < 40; ++i) r40[i] = static_cast<double>(i);
  const Tensor d40 = standardize_frames(Tensor({40, 1}, r40), 28);
  for (std::size_t t = 0; t < 28; ++t) EXPECT_EQ(d40.at(t), std::round(t * 39.0 / 27.0)) << t;

  for (std::size_t n : {1u, 5u, 27u, 29u, 100u}) EXPECT_EQ(standardize_frames(Tensor({n, 3}, 1.0), 28).dim(0), 28u);
}

TEST(AugmentAudio, IdentitiesAndDeterminism) {
  const AudioWave w = tone(500.0, 0.1);
  std::mt19937_64 rng(9);
  const AudioAugmentOptions off{0.0, 0.0, 30.0, 0.0, 0.7, 1.3};
  EXPECT_EQ(augment_audio(w, rng, off), w);
  const AudioAugmentOptions invert{1.0, 0.0, 30.0, 0.0, 0.7, 1.3};
  EXPECT_EQ(augment_audio(augment_audio(w, rng, invert), rng, invert), w);
  std::mt19937_64 a(10), b(10);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(augment_audio(w, a), augment_audio(w, b));
}

TEST(AugmentAudio, ProbabilitiesRoughlyHonoured) {
  const AudioWave w = tone(500.0, 0.02);
  std::mt19937_64 rng(11);
  const AudioAugmentOptions only_invert{0.8, 0.0, 30.0, 0.0, 0.7, 1.3};
  int inverted = 0;
  for (int i = 0; i < 2000; ++i) inverted += augment_audio(w, rng, only_invert).samples[10] == -w.samples[10];
  EXPECT_NEAR(inverted / 2000.0, 0.8, 0.03);
}

TEST(MixAtSnr, HitsRequestedRatio) {
  const AudioWave clean = tone(300.0, 0.5, 0.4);
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0.0, 0.3);
  AudioWave noise;
  noise.samples.resize(7000);  // shorter than the clean clip: looped
  for (float& s : noise.samples) s = static_cast<float>(n(rng));
  for (double snr : {-5.0, 0.0, 5.0, 10.0}) {
    const AudioWave mixed = mix_at_snr(clean, noise, snr);
    ASSERT_EQ(mixed.samples.size(), clean.samples.size());
    AudioWave residual = mixed;
    for (std::size_t i = 0; i < residual.samples.size(); ++i) residual.samples[i] -= clean.samples[i];
    const double measured = 10.0 * std::log10(mean_power(clean) / mean_power(residual));
    EXPECT_NEAR(measured, snr, 0.01) << snr;
    if (snr == 0.0) EXPECT_NEAR(mean_power(residual) / mean_power(clean), 1.0, 1e-5);
  }
  const AudioWave quiet = mix_at_snr(clean, noise, 60.0);
  const double rms = std::sqrt(mean_power(clean));
  for (std::size_t i = 0; i < clean.samples.size(); ++i) EXPECT_LT(std::abs(quiet.samples[i] - clean.samples[i]), 6e-3 * rms);
  AudioWave silent;
  silent.samples.assign(100, 0.0f);
  EXPECT_THROW(mix_at_snr(silent, noise, 0.0), DegenerateInputError);
  EXPECT_THROW(mix_at_snr(clean, silent, 0.0), DegenerateInputError);
}

TEST(Wav, RoundTripAndResample) {
  const fs::path dir = scratch_dir("wav");
  AudioWave w = tone(440.0, 0.05);
  w.samples[3] = 1.0f;
  w.samples[4] = -1.0f;
  write_wav(dir / "a.wav", w);
  const AudioWave back = read_wav(dir / "a.wav");
  ASSERT_EQ(back.samples.size(), w.samples.size());
  EXPECT_EQ(back.sample_rate, kSampleRate);
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(back.samples[i], w.samples[i], 1.0 / 32767.0);
  AudioWave w48{std::vector<float>(48000, 0.25f), 48000};
  const AudioWave r = resample_linear(w48, kSampleRate);
  EXPECT_EQ(r.sample_rate, kSampleRate);
  EXPECT_NEAR(static_cast<double>(r.samples.size()), 44100.0, 1.0);
  for (float s : r.samples) EXPECT_FLOAT_EQ(s, 0.25f);
  fs::remove_all(dir);
}

// ---- synthetic data ----

SynthSpec small_spec() {
  SynthSpec s;
  s.train_per_class = 2;
  s.test_per_class = 1;
  return s;
}

TEST(Synth, DeterministicAndLabelled) {
  const SynthSpec spec = small_spec();
  const AvDataset a = synth_dataset(spec, 5);
  const AvDataset b = synth_dataset(spec, 5);
  ASSERT_EQ(a.train.size(), 20u);
  ASSERT_EQ(a.test.size(), 10u);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_EQ(a.train[i].label, static_cast<int>(i % 10));
    EXPECT_EQ(a.train[i].events, b.train[i].events);
    EXPECT_EQ(a.train[i].audio, b.train[i].audio);
    EXPECT_EQ(a.train[i].audio.samples.size(), 44100u);
    EXPECT_NO_THROW(a.train[i].events.validate());
  }
  const AvDataset c = synth_dataset(spec, 6);
  EXPECT_NE(a.train[0].audio, c.train[0].audio);
}

TEST(Synth, VisionDependsOnlyOnThePair) {
  const SynthSpec spec = small_spec();
  for (std::size_t pair = 0; pair < 5; ++pair) {
    std::mt19937_64 r1(42), r2(42);
    EXPECT_EQ(synth_events(spec, pair, r1), synth_events(spec, pair, r2));
  }
  // synth_sample(label) draws vision as synth_events(label / 2) on the
  // sample's visual stream; the class parity never enters.
  std::mt19937_64 r1(43), r2(43);
  EXPECT_NE(synth_events(spec, 0, r1), synth_events(spec, 1, r2));
}

TEST(Synth, SpecValidation) {
  SynthSpec s;
  s.num_classes = 5;
  EXPECT_THROW(s.validate(), ConfigError);
  s.num_classes = 10;
  s.duration_s = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
  nlohmann::json j = SynthSpec{}.to_json();
  j["snr"] = 3;
  EXPECT_THROW(SynthSpec::from_json(j), ConfigError);
  j = SynthSpec{}.to_json();
  j["snr_db"] = nullptr;
  EXPECT_FALSE(SynthSpec::from_json(j).snr_db.has_value());
}

// Nearest class-mean on time-averaged filterbanks: clean audio separates the
// classes almost perfectly and the interfering talker makes it worse.
TEST(Synth, AudioDifficultyFollowsSnr) {
  auto accuracy = [](std::optional<double> snr, std::uint64_t seed) {
    SynthSpec spec;
    spec.train_per_class = 8;
    spec.test_per_class = 8;
    spec.snr_db = snr;
    const std::size_t C = spec.num_classes;
    auto feature = [&](const AvSample& s) {
      const Tensor f = fbank_frames(s.audio);
      std::vector<double> m(40, 0.0);
      for (std::size_t r = 0; r < f.dim(0); ++r)
        for (std::size_t b = 0; b < 40; ++b) m[b] += f.at(r * 40 + b) / f.dim(0);
      return m;
    };
    std::vector<std::vector<double>> centroid(C, std::vector<double>(40, 0.0));
    for (std::size_t i = 0; i < split_size(spec, Split::kTrain); ++i) {
      const AvSample s = synth_sample(spec, seed, Split::kTrain, i);
      const auto f = feature(s);
      for (std::size_t b = 0; b < 40; ++b) centroid[s.label][b] += f[b];
    }
    std::size_t correct = 0, total = split_size(spec, Split::kTest);
    for (std::size_t i = 0; i < total; ++i) {
      const AvSample s = synth_sample(spec, seed, Split::kTest, i);
      const auto f = feature(s);
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t c = 0; c < C; ++c) {
        double d = 0.0;
        for (std::size_t b = 0; b < 40; ++b) d += std::pow(f[b] - centroid[c][b] / spec.train_per_class, 2);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      correct += best == static_cast<std::size_t>(s.label);
    }
    return static_cast<double>(correct) / total;
  };
  double clean = 0.0, mid = 0.0, loud = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    clean += accuracy(std::nullopt, seed) / 3;
    mid += accuracy(0.0, seed) / 3;
    loud += accuracy(-5.0, seed) / 3;
  }
  EXPECT_GE(clean, 0.95);
  EXPECT_GE(clean, mid);
  EXPECT_GE(mid, loud);
  EXPECT_LT(loud, clean);
}

// ---- dataset files ----

TEST(Dataset, WrittenFilesReproduceTheGenerator) {
  SynthSpec spec;
  spec.num_classes = 4;
  spec.train_per_class = 2;
  spec.test_per_class = 1;
  const fs::path dir = scratch_dir("data");
  write_synth_dataset(dir, spec, 3);
  const auto entries = read_manifest(dir / "train" / "manifest.jsonl");
  ASSERT_EQ(entries.size(), 8u);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const AvSample s = synth_sample(spec, 3, Split::kTrain, i);
    EXPECT_EQ(entries[i].label, s.label);
    EXPECT_EQ(read_events(entries[i].event_path), s.events);
    const AudioWave a = read_wav(entries[i].audio_path);
    ASSERT_EQ(a.samples.size(), s.audio.samples.size());
  }
  EXPECT_EQ(read_manifest(dir / "test" / "manifest.jsonl").size(), 4u);
  fs::remove_all(dir);
}

TEST(Dataset, ManifestErrorsNameTheLine) {
  const fs::path dir = scratch_dir("manifest");
  {
    std::ofstream os(dir / "m.jsonl");
    os << R"({"event_path": "a.csev", "audio_path": "a.wav", "label": 0})" << "\n";
    os << R"({"event_path": "b.csev", "label": 1})" << "\n";
  }
  try {
    read_manifest(dir / "m.jsonl");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("m.jsonl:2:"), std::string::npos) << e.what();
  }
  fs::remove_all(dir);
}

TEST(Dataset, BatchLayout) {
  SynthSpec spec;
  spec.num_classes = 4;
  spec.train_per_class = 1;
  spec.test_per_class = 1;
  DataPipeline p;
  const auto samples = synth_prepared(spec, 1, Split::kTest, p, false);
  std::vector<const PreparedSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  const ModelInput in = make_batch(ptrs, p, nullptr);
  EXPECT_EQ(in.voxels.shape(), (Shape{28, 4, 44, 44, 2}));
  EXPECT_EQ(in.fbank.shape(), (Shape{28, 4, 40}));
  const ModelInput one = make_batch(samples[2], p);
  const std::size_t frame = 44 * 44 * 2;
  for (std::size_t t = 0; t < 28; ++t) {
    for (std::size_t i = 0; i < frame; ++i) ASSERT_EQ(in.voxels.at((t * 4 + 2) * frame + i), one.voxels.at(t * frame + i));
    for (std::size_t i = 0; i < 40; ++i) ASSERT_EQ(in.fbank.at((t * 4 + 2) * 40 + i), one.fbank.at(t * 40 + i));
  }
}

TEST(DataPipeline, JsonRoundTrip) {
  DataPipeline p;
  p.visual.flip_probability = 0.25;
  p.augment_audio = false;
  EXPECT_EQ(DataPipeline::from_json(p.to_json()).to_json(), p.to_json());
  nlohmann::json j = p.to_json();
  j["crop_size"] = 80;
  EXPECT_THROW(DataPipeline::from_json(j), ConfigError);
}

}  // namespace
}  // namespace cuesnn
