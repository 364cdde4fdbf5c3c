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

#include <random>

#include "cuesnn/context.hpp"
#include "cuesnn/errors.hpp"
#include "cuesnn/ops.hpp"
#include "cuesnn/training.hpp"
#include "cuesnn/vca2m.hpp"
#include "support.hpp"

namespace cuesnn {
namespace {

using testing::binary_values;
using testing::uniform_values;

TEST(CausalMask, LowerTriangleForThreeSteps) {
  const CausalMask m(3);
  const std::vector<std::uint8_t> expected{1, 0, 0, 1, 1, 0, 1, 1, 1};
  EXPECT_TRUE(std::equal(expected.begin(), expected.end(), m.entries().begin()));
  EXPECT_TRUE(m.allows(2, 0));
  EXPECT_FALSE(m.allows(0, 2));
}

TEST(CausalMask, RejectsAnythingElse) {
  EXPECT_NO_THROW(CausalMask::from_entries(2, {1, 0, 1, 1}));
  EXPECT_THROW(CausalMask::from_entries(2, {1, 1, 1, 1}), ContractError);
  EXPECT_THROW(CausalMask::from_entries(2, {1, 0, 0, 1}), ContractError);
  EXPECT_THROW(CausalMask::from_entries(2, {1, 0, 1}), DimensionError);
}

TEST(MaskedAttention, HandWorkedTwoStepExample) {
  const std::vector<double> ones{1, 1};
  const SpikeTensor q = SpikeTensor::from_values({2, 1}, ones);
  const LifParams sn{0.5, 0.5, 1.0};
  const SpikeTensor out = masked_attention(q, q, q, 0.25, CausalMask(2), sn);
  EXPECT_EQ(out[0], 0);
  EXPECT_EQ(out[1], 1);

  // Pre-activation check: masked scores [[1,0],[1,1]] times V times s.
  const Tensor t = reshape(q.to_tensor(), {2, 1, 1});
  const Tensor acc = attention_accumulate(t, t, t, Tensor::scalar(0.25), CausalMask(2).entries());
  EXPECT_DOUBLE_EQ(acc.at(0), 0.25);
  EXPECT_DOUBLE_EQ(acc.at(1), 0.5);
}

TEST(MaskedAttention, FutureRowsCannotReachThePast) {
  std::mt19937_64 rng(1);
  const std::size_t steps = 6, d = 5;
  const auto qv = binary_values(steps * d, rng);
  const auto kv = binary_values(steps * d, rng);
  const auto vv = binary_values(steps * d, rng);
  const SpikeTensor q = SpikeTensor::from_values({steps, d}, qv);
  const SpikeTensor k = SpikeTensor::from_values({steps, d}, kv);
  const SpikeTensor v = SpikeTensor::from_values({steps, d}, vv);
  const LifParams sn{0.5, 0.5, 1.0};
  const SpikeTensor base = masked_attention(q, k, v, 0.25, CausalMask(steps), sn);
  for (std::size_t t = 1; t < steps; ++t) {
    auto k2 = kv, v2 = vv;
    for (std::size_t i = t * d; i < steps * d; ++i) {
      k2[i] = 1.0 - k2[i];
      v2[i] = 1.0;
    }
    const SpikeTensor out = masked_attention(q, SpikeTensor::from_values({steps, d}, k2),
                                             SpikeTensor::from_values({steps, d}, v2), 0.25, CausalMask(steps), sn);
    for (std::size_t i = 0; i < t * d; ++i) EXPECT_EQ(out[i], base[i]) << "t=" << t << " i=" << i;
  }
}

class Vca2mTest : public ::testing::Test {
 protected:
  Vca2mConfig cfg() const {
    Vca2mConfig c;
    c.cue_dim = 3;
    c.feature_dim = 6;
    c.attn_dim = 4;
    return c;
  }
};

TEST_F(Vca2mTest, ZeroCueGivesZeroQuery) {
  Rng rng(2);
  const Vca2m m("a", cfg(), rng);
  std::mt19937_64 xr(3);
  ForwardContext ctx{Phase::kEval};
  const auto qkv = m.project_qkv(ctx, Tensor({4, 2, 3}), Tensor({4, 2, 6}, binary_values(48, xr)));
  for (double v : qkv.q.values()) EXPECT_EQ(v, 0.0);
}

TEST_F(Vca2mTest, ProjectionsAreBinaryAndAligned) {
  Rng rng(4);
  const Vca2m m("a", cfg(), rng);
  std::mt19937_64 xr(5);
  ForwardContext ctx{Phase::kTrain};
  for (int trial = 0; trial < 1000; ++trial) {
    const auto qkv = m.project_qkv(ctx, Tensor({3, 2, 3}, binary_values(18, xr)), Tensor({3, 2, 6}, binary_values(36, xr)));
    for (const Tensor* t : {&qkv.q, &qkv.k, &qkv.v})
      for (double v : t->values()) ASSERT_TRUE(v == 0.0 || v == 1.0);
  }
  EXPECT_THROW(m.project_qkv(ctx, Tensor({3, 2, 3}), Tensor({4, 2, 6})), AlignmentError);
}

TEST_F(Vca2mTest, ProjectionEqualsComposedParts) {
  Rng rng(6);
  Vca2m m("a", cfg(), rng);
  std::mt19937_64 xr(7);
  const Tensor phi({2, 2, 3}, binary_values(12, xr, 0.7));
  const Tensor psi({2, 2, 6}, binary_values(24, xr));
  ForwardContext ctx{Phase::kTrain};
  const auto qkv = m.project_qkv(ctx, phi, psi);
  auto ref = [&](const Tensor& x, Linear& w, BatchNorm& bn) {
    BatchNormStats st{Tensor({4}, 0.0), Tensor({4}, 1.0)};
    return lif_sequence(batch_norm(linear(x, w.weight(), Tensor()), bn.gamma(), bn.beta(), st, true), LifParams{},
                        SpikeMode::kSpiking);
  };
  const Tensor rq = ref(phi, m.w_q(), m.bn_q());
  const Tensor rk = ref(psi, m.w_k(), m.bn_k());
  const Tensor rv = ref(psi, m.w_v(), m.bn_v());
  EXPECT_TRUE(std::equal(rq.values().begin(), rq.values().end(), qkv.q.values().begin()));
  EXPECT_TRUE(std::equal(rk.values().begin(), rk.values().end(), qkv.k.values().begin()));
  EXPECT_TRUE(std::equal(rv.values().begin(), rv.values().end(), qkv.v.values().begin()));
}

TEST_F(Vca2mTest, SilentFeedforwardLeavesFeaturesUntouched) {
  Rng rng(8);
  Vca2m m("a", cfg(), rng);
  for (double& v : m.feedforward().weight().values()) v = 0.0;
  for (double& v : m.feedforward().bias().values()) v = 0.0;
  for (double& v : m.bn_feedforward().beta().values()) v = 0.5;
  std::mt19937_64 xr(9);
  const Tensor psi({5, 2, 6}, binary_values(60, xr));
  ForwardContext ctx{Phase::kEval};
  const Tensor out = m.forward(ctx, Tensor({5, 2, 3}, binary_values(30, xr)), psi);
  EXPECT_TRUE(std::equal(out.values().begin(), out.values().end(), psi.values().begin()));
}

TEST_F(Vca2mTest, OutputsLieInZeroOneTwo) {
  Rng rng(10);
  Vca2m m("a", cfg(), rng);
  for (double& v : m.feedforward().bias().values()) v = 1.0;
  std::mt19937_64 xr(11);
  ForwardContext ctx{Phase::kTrain};
  bool saw_two = false;
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor out = m.forward(ctx, Tensor({4, 2, 3}, binary_values(24, xr)), Tensor({4, 2, 6}, binary_values(48, xr)));
    for (double v : out.values()) {
      ASSERT_TRUE(v == 0.0 || v == 1.0 || v == 2.0);
      saw_two = saw_two || v == 2.0;
    }
  }
  EXPECT_TRUE(saw_two);
}

TEST_F(Vca2mTest, EvalOutputIsCausal) {
  Rng rng(12);
  Vca2m m("a", cfg(), rng);
  std::mt19937_64 xr(13);
  const std::size_t steps = 7;
  {
    ForwardContext warm{Phase::kTrain};
    m.forward(warm, Tensor({steps, 4, 3}, binary_values(steps * 12, xr)), Tensor({steps, 4, 6}, binary_values(steps * 24, xr)));
  }
  const Tensor phi({steps, 1, 3}, binary_values(steps * 3, xr));
  const Tensor psi({steps, 1, 6}, binary_values(steps * 6, xr));
  ForwardContext ctx{Phase::kEval};
  const Tensor base = m.forward(ctx, phi, psi);
  for (std::size_t t = 1; t < steps; ++t) {
    Tensor phi2 = phi.clone(), psi2 = psi.clone();
    for (std::size_t i = t * 3; i < phi2.numel(); ++i) phi2.values()[i] = 1.0 - phi2.values()[i];
    for (std::size_t i = t * 6; i < psi2.numel(); ++i) psi2.values()[i] = 1.0;
    const Tensor out = m.forward(ctx, phi2, psi2);
    for (std::size_t i = 0; i < t * 6; ++i) EXPECT_EQ(out.at(i), base.at(i));
  }
  m.set_causal(false);
  bool changed = false;
  for (std::size_t t = 1; t < steps && !changed; ++t) {
    Tensor psi2 = psi.clone();
    for (std::size_t i = t * 6; i < psi2.numel(); ++i) psi2.values()[i] = 1.0;
    const Tensor out = m.forward(ctx, phi, psi2);
    for (std::size_t i = 0; i < t * 6; ++i) changed = changed || out.at(i) != base.at(i);
  }
  EXPECT_TRUE(changed) << "an all-ones mask should let the future leak";
}

TEST_F(Vca2mTest, AttentionCountsOnlyAccumulationsBeyondTheScale) {
  Rng rng(14);
  Vca2m m("a", cfg(), rng);
  Vca2m::Qkv qkv;
  std::mt19937_64 xr(15);
  qkv.q = Tensor({5, 1, 4}, binary_values(20, xr, 0.6));
  qkv.k = Tensor({5, 1, 4}, binary_values(20, xr, 0.6));
  qkv.v = Tensor({5, 1, 4}, binary_values(20, xr, 0.6));
  OpCounter ops;
  ForwardContext ctx{Phase::kEval};
  ctx.ops = &ops;
  m.attend(ctx, qkv);
  ASSERT_FALSE(ops.layers().empty());
  const OpCounts att = ops.layers().front().second;
  EXPECT_EQ(ops.layers().front().first, "a.attention");
  // One multiplication per output element, for the scalar s.
  EXPECT_EQ(att.mults, 5u * 4u);
  std::uint64_t expected_adds = 0;
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t j = 0; j <= t; ++j) {
      std::uint64_t overlap = 0;
      for (std::size_t c = 0; c < 4; ++c) overlap += qkv.q.at(t * 4 + c) * qkv.k.at(j * 4 + c);
      expected_adds += overlap;
      if (overlap > 0)
        for (std::size_t c = 0; c < 4; ++c) expected_adds += static_cast<std::uint64_t>(qkv.v.at(j * 4 + c));
    }
  EXPECT_EQ(att.adds, expected_adds);
  EXPECT_GT(att.adds, 0u);
}

TEST_F(Vca2mTest, ScaleStartsAtQuarterAndLearns) {
  Rng rng(16);
  Vca2m m("a", cfg(), rng);
  EXPECT_DOUBLE_EQ(m.scale().item(), 0.25);
  // Denser Q/K/V so that some scores are nonzero.
  for (BatchNorm* bn : {&m.bn_q(), &m.bn_k(), &m.bn_v()})
    for (double& v : bn->beta().values()) v = 1.0;
  std::mt19937_64 xr(17);
  const Tensor phi({4, 3, 3}, binary_values(36, xr, 0.8));
  const Tensor psi({4, 3, 6}, binary_values(72, xr, 0.8));
  NamedTensors params;
  NamedTensors buffers;
  m.collect(params, buffers);
  Adam adam(params);
  for (const auto& [name, t] : params) t.zero_grad();
  GradTape tape;
  Tensor loss;
  {
    auto rec = tape.record();
    ForwardContext ctx{Phase::kTrain};
    loss = testing::probe_loss(m.forward(ctx, phi, psi));
  }
  tape.backward(loss);
  ASSERT_TRUE(m.scale().has_grad());
  ASSERT_NE(m.scale().grad()[0], 0.0);
  adam.step(1e-2);
  EXPECT_NE(m.scale().item(), 0.25);
}

}  // namespace
}  // namespace cuesnn
