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
#include <filesystem>
#include <numbers>
#include <map>
#include <ostream>
#include <random>
#include <streambuf>

#include "cuesnn/checkpoint.hpp"
#include "cuesnn/errors.hpp"
#include "cuesnn/training.hpp"
#include "fixtures.hpp"

namespace cuesnn {
namespace {

namespace fs = std::filesystem;
using testing::numeric_gradient;
using testing::relative_error;
using testing::tiny_config;

NetworkConfig tiny_net(FusionMode mode = FusionMode::kHiAvsnn) {
  NetworkConfig c = tiny_config(mode);
  c.fbank_dim = 40;
  return c;
}

DataPipeline tiny_pipeline() {
  DataPipeline p;
  p.time_steps = 3;
  p.sensor_crop = 16;
  p.visual.crop = 16;
  p.visual.output = 8;
  p.augment_audio = false;
  return p;
}

// Events clustered in a label-specific quadrant of a 16x16 sensor and a
// filterbank with a label-specific bias.
std::vector<PreparedSample> tiny_samples(std::size_t n, std::uint64_t seed, std::size_t classes = 4) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> jitter(0, 7);
  std::vector<PreparedSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    PreparedSample s;
    s.label = static_cast<int>(i % classes);
    s.events.width = s.events.height = 16;
    const int ox = (s.label % 2) * 8, oy = (s.label / 2 % 2) * 8;
    for (std::uint64_t t = 0; t < 120; ++t) {
      s.events.events.push_back({t * 10, static_cast<std::uint16_t>(ox + jitter(rng)),
                                 static_cast<std::uint16_t>(oy + jitter(rng)), static_cast<std::uint8_t>(t & 1)});
    }
    std::vector<double> f(3 * 40);
    for (std::size_t k = 0; k < f.size(); ++k) f[k] = noise(rng) + ((k % 40) / 10 == static_cast<std::size_t>(s.label) ? 2.0 : 0.0);
    s.fbank = Tensor({3, 40}, std::move(f));
    out.push_back(std::move(s));
  }
  return out;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("cuesnn_train_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void expect_same_tensors(const NamedTensors& a, const NamedTensors& b) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].first, b[i].first);
    const std::span<const double> x = a[i].second.values(), y = b[i].second.values();
    ASSERT_TRUE(std::equal(x.begin(), x.end(), y.begin(), y.end())) << a[i].first;
  }
}

TEST(SequenceLoss, UniformLogitsGiveLogC) {
  const Tensor logits({5, 2, 4}, 0.3);
  const std::vector<int> labels{1, 3};
  EXPECT_NEAR(sequence_loss(logits, labels).item(), std::log(4.0), 1e-12);
}

TEST(SequenceLoss, DuplicatingTimeStepsChangesNothing) {
  std::mt19937_64 rng(1);
  const auto v = testing::uniform_values(3 * 2 * 5, rng, -2, 2);
  const Tensor once({3, 2, 5}, v);
  std::vector<double> twice;
  for (std::size_t t = 0; t < 3; ++t)
    for (int r = 0; r < 2; ++r) twice.insert(twice.end(), v.begin() + t * 10, v.begin() + (t + 1) * 10);
  const std::vector<int> labels{0, 4};
  EXPECT_NEAR(sequence_loss(once, labels).item(), sequence_loss(Tensor({6, 2, 5}, twice), labels).item(), 1e-12);
}

TEST(SequenceLoss, GradientMatchesFiniteDifference) {
  std::mt19937_64 rng(2);
  const Tensor logits = Tensor::parameter({4, 3, 5}, testing::uniform_values(60, rng, -2, 2));
  const std::vector<int> labels{0, 2, 4};
  const auto g = testing::tape_gradients({logits}, [&] { return sequence_loss(logits, labels); })[0];
  const auto n = numeric_gradient(logits, [&] { return sequence_loss(logits.detach(), labels).item(); });
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], n[i], 1e-8) << i;
  const Tensor single({4, 5}, 0.0);
  EXPECT_NEAR(sequence_loss(single, std::vector<int>{2}).item(), std::log(5.0), 1e-12);
  EXPECT_THROW(sequence_loss(Tensor({4, 3, 5, 1}), labels), DimensionError);
}

TEST(Gradients, NonFiniteIsReported) {
  const Tensor a = Tensor::parameter({3}, {1, 2, 3});
  const Tensor b = Tensor::parameter({2}, {1, 2});
  a.grad_mut()[1] = std::nan("");
  b.grad_mut()[0] = 1.0;
  const NamedTensors params{{"a", a}, {"b", b}};
  try {
    check_finite_gradients(params);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("a (1 of 3)"), std::string::npos) << e.what();
    EXPECT_EQ(std::string(e.what()).find("b ("), std::string::npos);
  }
}

TEST(Gradients, ClippingRescalesGlobalNorm) {
  const Tensor a = Tensor::parameter({2}, {0, 0});
  a.grad_mut()[0] = 3.0;
  a.grad_mut()[1] = 4.0;
  const NamedTensors params{{"a", a}};
  EXPECT_DOUBLE_EQ(clip_gradients(params, 1.0), 5.0);
  EXPECT_NEAR(a.grad()[0], 0.6, 1e-15);
  EXPECT_NEAR(a.grad()[1], 0.8, 1e-15);
  EXPECT_NEAR(clip_gradients(params, 0.0), 1.0, 1e-15);
}

TEST(CosineSchedule, Endpoints) {
  EXPECT_DOUBLE_EQ(cosine_lr(1e-3, 0.0, 0, 150), 1e-3);
  EXPECT_NEAR(cosine_lr(1e-3, 0.0, 75, 150), 5e-4, 1e-18);
  EXPECT_NEAR(cosine_lr(1e-3, 0.0, 150, 150), 0.0, 1e-18);
  EXPECT_LE(cosine_lr(1e-3, 0.0, 149, 150), 0.01 * 1e-3);
  EXPECT_NEAR(cosine_lr(1e-3, 1e-4, 150, 150), 1e-4, 1e-18);
  EXPECT_THROW(cosine_lr(1e-3, 0.0, 0, 0), ConfigError);
}

// Three updates of a two-element parameter against the textbook recurrence.
TEST(Adam, MatchesScalarRecurrence) {
  const Tensor p = Tensor::parameter({2}, {0.5, -1.5});
  Adam adam({{"p", p}}, 0.9, 0.999, 1e-8);
  double w[2] = {0.5, -1.5}, m[2] = {0, 0}, v[2] = {0, 0};
  const double grads[3][2] = {{0.1, -2.0}, {0.3, 0.5}, {-0.7, 1e-3}};
  for (int t = 1; t <= 3; ++t) {
    p.zero_grad();
    for (int i = 0; i < 2; ++i) p.grad_mut()[i] = grads[t - 1][i];
    adam.step(0.01);
    for (int i = 0; i < 2; ++i) {
      const double g = grads[t - 1][i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      w[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(p.values()[i], w[i], 1e-10) << "step " << t;
    }
  }
  EXPECT_EQ(adam.steps(), 3u);
}

TEST(TrainStep, ZeroLearningRateLeavesWeightsAlone) {
  Network net(tiny_net(), 3);
  const auto before = net.parameters();
  std::vector<Tensor> copies;
  for (const auto& [n, t] : before) copies.push_back(t.clone());
  Adam adam(net.parameters());
  std::mt19937_64 rng(4);
  const ModelInput in = testing::random_input(net.config(), 4, rng);
  train_step(net, adam, in, std::vector<int>{0, 1, 2, 3}, 0.0, TrainConfig{});
  for (std::size_t i = 0; i < before.size(); ++i) {
    const std::span<const double> a = before[i].second.values(), b = copies[i].values();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << before[i].first;
  }
}

TEST(TrainStep, OverfitsAFixedBatch) {
  Network net(tiny_net(), 5);
  Adam adam(net.parameters());
  std::mt19937_64 rng(6);
  const ModelInput in = testing::random_input(net.config(), 8, rng);
  const std::vector<int> labels{0, 1, 2, 3, 3, 2, 1, 0};
  TrainConfig cfg;
  const double first = train_step(net, adam, in, labels, 1e-2, cfg).loss;
  StepMetrics last;
  for (int i = 0; i < 200; ++i) last = train_step(net, adam, in, labels, 1e-2, cfg);
  EXPECT_LE(last.loss, 0.1 * first) << first << " -> " << last.loss;
  EXPECT_EQ(last.accuracy, 1.0);
}

TEST(TrainStep, NonFiniteInputIsANumericError) {
  Network net(tiny_net(), 7);
  Adam adam(net.parameters());
  std::mt19937_64 rng(8);
  ModelInput in = testing::random_input(net.config(), 2, rng);
  in.fbank.values()[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(train_step(net, adam, in, std::vector<int>{0, 1}, 1e-3, TrainConfig{}), NumericError);
}

TEST(Fit, SeededRunsAreBitIdentical) {
  const auto data = tiny_samples(16, 9);
  const DataPipeline p = tiny_pipeline();
  TrainConfig cfg;
  cfg.batch = 4;
  cfg.seed = 11;
  FitOptions opt;
  opt.lr = 3e-3;
  opt.epochs = 2;
  Network a(tiny_net(), 1), b(tiny_net(), 1);
  const auto ra = fit(a, data, p, cfg, opt);
  const auto rb = fit(b, data, p, cfg, opt);
  ASSERT_EQ(ra.size(), 2u);
  EXPECT_EQ(ra[1].loss, rb[1].loss);
  expect_same_tensors(a.parameters(), b.parameters());
  expect_same_tensors(a.buffers(), b.buffers());
}

TEST(Fit, LearnsTheTinyTask) {
  const auto train = tiny_samples(32, 12);
  const auto test = tiny_samples(16, 13);
  const DataPipeline p = tiny_pipeline();
  TrainConfig cfg;
  cfg.batch = 8;
  FitOptions opt;
  opt.lr = 5e-3;
  opt.epochs = 40;
  Network net(tiny_net(), 2);
  const auto log = fit(net, train, p, cfg, opt);
  EXPECT_LT(log.back().loss, log.front().loss);
  EXPECT_GE(evaluate(net, test, p, 8).accuracy, 0.75);
}

// Accepts `limit` lines, then fails every write.
class FailingBuf : public std::streambuf {
 public:
  explicit FailingBuf(int limit) : limit_(limit) {}

 protected:
  int overflow(int c) override {
    if (lines_ >= limit_) return traits_type::eof();
    if (c == '\n') ++lines_;
    return c;
  }

 private:
  int limit_;
  int lines_ = 0;
};

TEST(Fit, ResumeContinuesExactly) {
  const auto data = tiny_samples(12, 14);
  const DataPipeline p = tiny_pipeline();
  TrainConfig cfg;
  cfg.batch = 4;
  cfg.seed = 15;
  const fs::path dir = scratch("resume");

  FitOptions opt;
  opt.lr = 3e-3;
  opt.epochs = 3;
  Network straight(tiny_net(), 3);
  fit(straight, data, p, cfg, opt);

  // The epoch log breaks during epoch 3, after the epoch-2 checkpoint.
  opt.checkpoint = dir / "run.ckpt";
  FailingBuf buf(2);
  std::ostream log(&buf);
  log.exceptions(std::ios::badbit);
  opt.log = &log;
  Network crashed(tiny_net(), 3);
  EXPECT_THROW(fit(crashed, data, p, cfg, opt), std::ios_base::failure);

  Network scratch_net(tiny_net(), 99);
  TrainState state;
  restore_checkpoint(scratch_net, dir / "run.ckpt", &state);
  EXPECT_EQ(state.epoch, 2u);
  EXPECT_EQ(state.phase, "train");
  EXPECT_EQ(state.adam_step, 6u);

  opt.log = nullptr;
  opt.resume = true;
  Network resumed(tiny_net(), 42);
  const auto records = fit(resumed, data, p, cfg, opt);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].epoch, 3u);
  expect_same_tensors(resumed.parameters(), straight.parameters());
  expect_same_tensors(resumed.buffers(), straight.buffers());

  // A finished phase resumes to a no-op.
  Network again(tiny_net(), 43);
  EXPECT_TRUE(fit(again, data, p, cfg, opt).empty());
  expect_same_tensors(again.parameters(), straight.parameters());

  opt.phase = "finetune";
  Network wrong_phase(tiny_net(), 3);
  EXPECT_THROW(fit(wrong_phase, data, p, cfg, opt), ConfigError);
  fs::remove_all(dir);
}

TEST(Checkpoint, RoundTripAndMismatch) {
  const fs::path dir = scratch("ckpt");
  Network net(tiny_net(), 16);
  std::mt19937_64 rng(17);
  {
    ForwardContext ctx;
    ctx.phase = Phase::kTrain;
    net.forward(ctx, testing::random_input(net.config(), 3, rng));
  }
  save_checkpoint(dir / "a.ckpt", net);
  const Checkpoint ck = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(ck.config.fingerprint(), net.config().fingerprint());
  EXPECT_FALSE(ck.state.has_value());
  expect_same_tensors(ck.network->parameters(), net.parameters());
  expect_same_tensors(ck.network->buffers(), net.buffers());

  NetworkConfig other = tiny_net();
  other.audio_width = 12;
  Network wrong(other, 1);
  EXPECT_ANY_THROW(restore_checkpoint(wrong, dir / "a.ckpt"));
  fs::resize_file(dir / "a.ckpt", fs::file_size(dir / "a.ckpt") / 2);
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), IoError);
  fs::remove_all(dir);
}

TEST(Pretraining, FusedStartsFromTheUnimodalWeights) {
  const NetworkConfig fused = tiny_net();
  Network visual(unimodal_config(fused, FusionMode::kVisualOnly), 1);
  Network audio(unimodal_config(fused, FusionMode::kAudioOnly), 2);
  const auto net = init_from_pretrained(fused, 3, &visual, &audio);
  std::map<std::string, Tensor> mine;
  for (const auto& [n, t] : net->parameters()) mine.emplace(n, t);
  std::size_t from_audio = 0, from_visual = 0;
  for (const auto* src : {&audio, &visual}) {
    for (const auto& [n, t] : src->parameters()) {
      if (!mine.count(n) || mine.at(n).shape() != t.shape()) continue;
      const std::span<const double> a = mine.at(n).values(), b = t.values();
      EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << n;
      (src == &audio ? from_audio : from_visual) += 1;
    }
  }
  EXPECT_GT(from_audio, 0u);
  EXPECT_GT(from_visual, 0u);
  // attention weights have no unimodal counterpart and stay fresh
  bool has_attention = false;
  for (const auto& [n, t] : net->parameters()) has_attention |= n.find("attn") != std::string::npos || n.find("cue") != std::string::npos;
  EXPECT_TRUE(has_attention);
}

TEST(Evaluate, DoesNotTouchBatchNormState) {
  const auto data = tiny_samples(8, 18);
  const DataPipeline p = tiny_pipeline();
  Network net(tiny_net(), 4);
  {
    ForwardContext ctx;
    ctx.phase = Phase::kTrain;
    std::vector<const PreparedSample*> ptrs;
    for (const auto& s : data) ptrs.push_back(&s);
    net.forward(ctx, make_batch(ptrs, p, nullptr));
  }
  std::vector<Tensor> before;
  for (const auto& [n, t] : net.buffers()) before.push_back(t.clone());
  const EvalMetrics m = evaluate(net, data, p, 3);
  EXPECT_EQ(m.samples, 8u);
  const auto after = net.buffers();
  for (std::size_t i = 0; i < before.size(); ++i) {
    const std::span<const double> a = before[i].values(), b = after[i].second.values();
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin())) << after[i].first;
  }
  EXPECT_THROW(evaluate(net, {}, p), EmptyInputError);
}

TEST(TrainConfig, JsonAndValidation) {
  TrainConfig c;
  c.lr_pretrain = 2e-3;
  c.epochs_finetune = 7;
  EXPECT_EQ(TrainConfig::from_json(c.to_json()).to_json(), c.to_json());
  nlohmann::json j = c.to_json();
  j["learning_rate"] = 1.0;
  EXPECT_THROW(TrainConfig::from_json(j), ConfigError);
  c.batch = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.lr_pretrain = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Pipeline, WritesCheckpointsAndLog) {
  const auto data = tiny_samples(8, 19);
  const DataPipeline p = tiny_pipeline();
  TrainConfig cfg;
  cfg.batch = 4;
  cfg.epochs_pretrain = 1;
  cfg.epochs_finetune = 1;
  const fs::path dir = scratch("pipeline");
  const PipelineResult r = run_pipeline(tiny_net(), cfg, p, data, &data, dir);
  for (const char* f : {"pretrain_visual.ckpt", "pretrain_audio.ckpt", "final.ckpt", "train_log.jsonl"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  ASSERT_EQ(r.log.size(), 3u);
  EXPECT_EQ(r.log[0].phase, "pretrain_visual");
  EXPECT_EQ(r.log[2].phase, "finetune");
  EXPECT_TRUE(r.log[2].test_accuracy.has_value());
  fs::remove_all(dir);
}

}  // namespace
}  // namespace cuesnn
