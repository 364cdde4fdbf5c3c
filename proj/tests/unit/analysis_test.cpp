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
#include <random>

#include "cuesnn/analysis.hpp"
#include "cuesnn/errors.hpp"
#include "fixtures.hpp"

namespace cuesnn {
namespace {

using testing::tiny_config;

NetworkConfig tiny_net(std::size_t steps = 3) {
  NetworkConfig c = tiny_config();
  c.fbank_dim = 40;
  c.time_steps = steps;
  return c;
}

DataPipeline tiny_pipeline(std::size_t steps = 3) {
  DataPipeline p;
  p.time_steps = steps;
  p.sensor_crop = 16;
  p.visual.crop = 16;
  p.visual.output = 8;
  p.augment_audio = false;
  return p;
}

std::vector<PreparedSample> tiny_samples(std::size_t n, std::uint64_t seed, std::size_t steps = 3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> pix(0, 15);
  std::vector<PreparedSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    PreparedSample s;
    s.label = static_cast<int>(i % 4);
    s.events.width = s.events.height = 16;
    for (std::uint64_t t = 0; t < 400; ++t) {
      s.events.events.push_back({t * 7, static_cast<std::uint16_t>(pix(rng)), static_cast<std::uint16_t>(pix(rng)),
                                 static_cast<std::uint8_t>(rng() & 1)});
    }
    std::vector<double> f(steps * 40);
    for (double& v : f) v = noise(rng);
    s.fbank = Tensor({steps, 40}, std::move(f));
    out.push_back(std::move(s));
  }
  return out;
}

// A fresh network whose batch norms have seen the data, so spikes reach the
// attention blocks and the readout in eval mode.
std::unique_ptr<Network> calibrated(const std::vector<PreparedSample>& data, std::size_t steps = 3,
                                    std::uint64_t seed = 1) {
  auto net = std::make_unique<Network>(tiny_net(steps), seed);
  std::vector<const PreparedSample*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s);
  calibrate_batchnorm(*net, make_batch(ptrs, tiny_pipeline(steps), nullptr));
  return net;
}

// Shifts the attention projections up so Q, K and V fire often enough for
// every query to see several keys.
void densify_attention(Network& net) {
  Vca2m* a = net.attention_at(1);
  for (BatchNorm* bn : {&a->bn_q(), &a->bn_k(), &a->bn_v()})
    for (double& v : bn->beta().values()) v = 1.0;
}

// ---- energy ----

TEST(Energy, PublishedRowsRecompute) {
  EXPECT_NEAR(energy_from_counts(36'700'000, 1'076'200'000).energy_mj, 1.10, 0.005);
  EXPECT_NEAR(energy_from_counts(707'500'000, 707'500'000).energy_mj, 3.25, 0.005);
  EXPECT_NEAR(energy_from_counts(31'500'000, 1'048'300'000).energy_mj, 1.06, 0.005);
  EXPECT_DOUBLE_EQ(energy_mj(1e9, 0.0), 3.7);
  EXPECT_DOUBLE_EQ(energy_mj(0.0, 1e9), 0.9);
}

TEST(Energy, SpikingNetworkIsMostlyAdditions) {
  const auto data = tiny_samples(8, 2);
  const auto net = calibrated(data);
  const ModelInput in = make_batch(data[0], tiny_pipeline());
  const EnergyReport a = estimate_energy(*net, in);
  const EnergyReport b = estimate_energy(*net, in);
  EXPECT_GT(a.add_count, a.mult_count);
  EXPECT_GT(a.mult_count, 0u);
  EXPECT_EQ(a.add_count, b.add_count);
  EXPECT_EQ(a.mult_count, b.mult_count);
  std::uint64_t adds = 0, mults = 0;
  for (const auto& l : a.layers) {
    adds += l.adds;
    mults += l.mults;
  }
  EXPECT_EQ(adds, a.add_count);
  EXPECT_EQ(mults, a.mult_count);
  EXPECT_NEAR(a.energy_mj, energy_mj(static_cast<double>(a.mult_count), static_cast<double>(a.add_count)), 1e-15);
  EXPECT_FALSE(a.to_text().empty());
  EXPECT_EQ(a.to_json().at("add_count").get<std::uint64_t>(), a.add_count);
}

TEST(Energy, OnlyDefinedWithFrozenStatistics) {
  const auto data = tiny_samples(2, 3);
  Network net(tiny_net(), 1);
  EXPECT_THROW(estimate_energy(net, make_batch(data[0], tiny_pipeline()), Phase::kTrain), ContractError);
}

// ---- causality ----

TEST(Causality, CausalNetworkPasses) {
  const auto data = tiny_samples(8, 4);
  const auto net = calibrated(data);
  densify_attention(*net);
  std::mt19937_64 rng(5);
  const CausalityVerdict v = verify_causality(*net, data[1], tiny_pipeline(), rng);
  EXPECT_TRUE(v.pass) << v.to_text();
  EXPECT_EQ(v.trials, 20u);
  EXPECT_EQ(v.probes, 3u);
  EXPECT_FALSE(v.first_violation.has_value());
}

TEST(Causality, SingleStepPassesTrivially) {
  const auto data = tiny_samples(4, 6, 1);
  const auto net = calibrated(data, 1);
  std::mt19937_64 rng(7);
  EXPECT_TRUE(verify_causality(*net, data[0], tiny_pipeline(1), rng).pass);
}

TEST(Causality, UnmaskedAttentionIsCaught) {
  const auto data = tiny_samples(8, 8);
  auto net = calibrated(data);
  densify_attention(*net);
  net->set_attention_causal(false);
  std::mt19937_64 rng(9);
  const CausalityVerdict v = verify_causality(*net, data[1], tiny_pipeline(), rng);
  ASSERT_FALSE(v.pass);
  ASSERT_TRUE(v.first_violation.has_value());
  EXPECT_LT(v.first_violation->timestep, 3u);
}

TEST(Causality, FutureEventLeakIsCaught) {
  const auto data = tiny_samples(8, 10);
  const auto net = calibrated(data);
  DataPipeline leaky = tiny_pipeline();
  leaky.voxelize.leak_future_bins = 1;
  std::mt19937_64 rng(11);
  const CausalityVerdict v = verify_causality(*net, data[1], leaky, rng);
  ASSERT_FALSE(v.pass);
  EXPECT_EQ(v.first_violation->tensor, "vcen.phi");
}

TEST(Causality, PerturbationKeepsThePast) {
  const auto data = tiny_samples(1, 12, 5);
  const DataPipeline p = tiny_pipeline(5);
  std::mt19937_64 rng(13);
  const PreparedSample& s = data[0];
  const PreparedSample q = perturb_future(s, 2, p, rng);
  const std::uint64_t t0 = s.events.events.front().timestamp_us, t1 = s.events.events.back().timestamp_us;
  EXPECT_EQ(q.events.events.front().timestamp_us, t0);
  EXPECT_EQ(q.events.events.back().timestamp_us, t1);
  std::vector<Event> past_s, past_q;
  for (const auto& e : s.events.events)
    if (event_bin(e.timestamp_us, t0, t1, 5) < 2) past_s.push_back(e);
  for (const auto& e : q.events.events)
    if (event_bin(e.timestamp_us, t0, t1, 5) < 2) past_q.push_back(e);
  EXPECT_EQ(past_s, past_q);
  for (std::size_t i = 0; i < 2 * 40; ++i) EXPECT_EQ(q.fbank.at(i), s.fbank.at(i));
  bool future_changed = false;
  for (std::size_t i = 2 * 40; i < 5 * 40; ++i) future_changed |= q.fbank.at(i) != s.fbank.at(i);
  EXPECT_TRUE(future_changed);
  EXPECT_NO_THROW(q.events.validate());
}

// ---- accuracy over time ----

TEST(AccuracyCurve, LengthAndTruncatedCrossCheck) {
  const auto data = tiny_samples(12, 14, 4);
  const auto net = calibrated(data, 4);
  const AccuracyCurve a = accuracy_over_time(*net, data, tiny_pipeline(4), 5);
  const AccuracyCurve b = accuracy_over_time_truncated(*net, data, tiny_pipeline(4), 5);
  ASSERT_EQ(a.accuracy.size(), 4u);
  EXPECT_EQ(a.samples, 12u);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.to_json().at("accuracy").size(), 4u);
  EXPECT_NE(a.to_csv().find('\n'), std::string::npos);
}

TEST(AccuracyCurve, FinalEntryIsTheUsualAccuracy) {
  const auto data = tiny_samples(12, 15);
  const auto net = calibrated(data);
  const AccuracyCurve c = accuracy_over_time(*net, data, tiny_pipeline(), 4);
  EXPECT_DOUBLE_EQ(c.accuracy.back(), evaluate(*net, data, tiny_pipeline(), 4).accuracy);
}

TEST(AccuracyCurve, UntrainedNetworkIsNearChance) {
  const auto data = tiny_samples(80, 16);
  const double sigma = std::sqrt(0.25 * 0.75 / 80.0);
  for (std::uint64_t seed : {1u, 2u}) {
    const auto net = calibrated(data, 3, seed);
    const AccuracyCurve c = accuracy_over_time(*net, data, tiny_pipeline(), 16);
    for (double acc : c.accuracy) EXPECT_NEAR(acc, 0.25, 3.0 * sigma);
  }
}

// ---- misc ----

TEST(SpikeRates, BoundedAndNamed) {
  const auto data = tiny_samples(6, 17);
  const auto net = calibrated(data);
  const auto rates = spike_rates(*net, data, tiny_pipeline(), 4);
  ASSERT_FALSE(rates.empty());
  for (const auto& e : rates) {
    EXPECT_FALSE(e.layer.empty());
    EXPECT_GE(e.rate(), 0.0);
    EXPECT_LE(e.rate(), 1.0);
  }
}

TEST(Ablation, OneRowPerPositionSet) {
  const auto data = tiny_samples(8, 18);
  NetworkConfig base = tiny_net();
  base.attention_speech_blocks = 2;
  base.cue_positions = {1};
  TrainConfig cfg;
  cfg.batch = 4;
  cfg.epochs_pretrain = 1;
  cfg.epochs_finetune = 1;
  const AblationTable t = run_cue_ablation(base, cfg, tiny_pipeline(), data, data, {{1}, {2}, {1, 2}});
  ASSERT_EQ(t.rows.size(), 3u);
  EXPECT_EQ(t.rows[2].cue_positions, (std::vector<int>{1, 2}));
  EXPECT_GT(t.rows[2].parameters, t.rows[0].parameters);
  EXPECT_EQ(t.rows[0].parameters, t.rows[1].parameters);
  for (const auto& r : t.rows) {
    EXPECT_GE(r.accuracy, 0.0);
    EXPECT_GT(r.energy_mj, 0.0);
  }
  EXPECT_EQ(t.to_json().size(), 3u);
}

}  // namespace
}  // namespace cuesnn
