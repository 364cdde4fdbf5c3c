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

#ifndef CUESNN_ANALYSIS_HPP_
#define CUESNN_ANALYSIS_HPP_

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cuesnn/context.hpp"
#include "cuesnn/dataset.hpp"
#include "cuesnn/model.hpp"
#include "cuesnn/training.hpp"

namespace cuesnn {

// 45 nm CMOS cost per 64-bit floating-point operation.
inline constexpr double kAddEnergyPj = 0.9;
inline constexpr double kMultEnergyPj = 3.7;

// (3.7 mults + 0.9 adds) pJ, expressed in millijoules.
double energy_mj(double mults, double adds);

struct LayerEnergy {
  std::string layer;
  std::uint64_t mults = 0;
  std::uint64_t adds = 0;
  double energy_mj = 0.0;
};

struct EnergyReport {
  std::uint64_t mult_count = 0;
  std::uint64_t add_count = 0;
  double energy_mj = 0.0;
  std::vector<LayerEnergy> layers;
  std::vector<SpikeRecorder::Entry> spike_rates;
  double overall_spike_rate = 0.0;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

EnergyReport energy_from_counts(std::uint64_t mults, std::uint64_t adds);

// Counts the operations of one forward pass over `input`. Batch norm is
// treated as folded into the preceding affine layer and costs nothing, which
// only holds with frozen statistics, so anything but the eval phase is a
// ContractError.
EnergyReport estimate_energy(const Network& net, const ModelInput& input, Phase phase = Phase::kEval);

struct CausalityViolation {
  std::size_t timestep = 0;  // 1-based probe timestep t; outputs 1..t changed
  std::size_t trial = 0;
  std::string tensor;        // "vcen.phi", "audio.psi" or "logits"
  std::size_t first_changed_step = 0;  // 1-based
  double max_abs_diff = 0.0;
};

struct CausalityVerdict {
  bool pass = true;
  std::optional<CausalityViolation> first_violation;
  std::size_t probes = 0;
  std::size_t trials = 0;
  std::size_t forwards = 0;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

struct CausalityOptions {
  std::size_t trials = 20;
  // 1-based probe timesteps; empty means 1..T.
  std::vector<std::size_t> timesteps;
  bool stop_at_first = true;
};

// For each probe t, replaces every event and filterbank frame that falls in
// segments t+1..T with random content and requires phi, psi and the logits of
// steps 1..t to stay bitwise identical. The first and last event timestamps
// are kept so the segment boundaries do not move.
CausalityVerdict verify_causality(const Network& net, const PreparedSample& sample, const DataPipeline& pipeline,
                                  std::mt19937_64& rng, const CausalityOptions& options = {});

// Random replacement of segments t+1..T of a sample, as used above.
PreparedSample perturb_future(const PreparedSample& sample, std::size_t t, const DataPipeline& pipeline,
                              std::mt19937_64& rng);

struct AccuracyCurve {
  std::vector<double> accuracy;  // entry t-1 is the accuracy using O(1..t)
  std::size_t samples = 0;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// Accuracy of predict(logits, upto_t = t) for every t, from one forward per
// sample.
AccuracyCurve accuracy_over_time(const Network& net, const std::vector<PreparedSample>& samples,
                                 const DataPipeline& pipeline, std::size_t batch = 16);

// The same curve from separate forwards in which every input segment after t
// is zeroed. Equals accuracy_over_time bitwise when the network is causal.
AccuracyCurve accuracy_over_time_truncated(const Network& net, const std::vector<PreparedSample>& samples,
                                           const DataPipeline& pipeline, std::size_t batch = 16);

// Mean per-layer firing rates over a sample set (eval phase).
std::vector<SpikeRecorder::Entry> spike_rates(const Network& net, const std::vector<PreparedSample>& samples,
                                              const DataPipeline& pipeline, std::size_t batch = 16);

// One train-phase forward (no gradients) that sets every batch norm's
// running statistics to those of `batch`. Untrained networks need this before
// eval-phase activity reaches the deeper layers.
void calibrate_batchnorm(const Network& net, const ModelInput& batch);

struct AblationRow {
  std::vector<int> cue_positions;
  double accuracy = 0.0;
  double energy_mj = 0.0;
  std::size_t parameters = 0;
  double wall_s = 0.0;
};

struct AblationTable {
  std::vector<AblationRow> rows;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

// Trains one hi_avsnn per cue-position set (sharing the pretrained subnets
// when pretraining is on) and evaluates each on `test`.
AblationTable run_cue_ablation(const NetworkConfig& base, const TrainConfig& cfg, const DataPipeline& pipeline,
                               const std::vector<PreparedSample>& train, const std::vector<PreparedSample>& test,
                               const std::vector<std::vector<int>>& position_sets);

}  // namespace cuesnn

#endif  // CUESNN_ANALYSIS_HPP_
