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

#ifndef CUESNN_TRAINING_HPP_
#define CUESNN_TRAINING_HPP_

#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cuesnn/checkpoint.hpp"
#include "cuesnn/dataset.hpp"
#include "cuesnn/model.hpp"

namespace cuesnn {

struct TrainConfig {
  double lr_pretrain = 1e-3;
  double lr_finetune = 5e-4;
  std::size_t epochs_pretrain = 150;
  std::size_t epochs_finetune = 50;
  std::size_t batch = 16;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double eta_min = 0.0;
  double grad_clip = 5.0;  // global L2 norm; 0 disables
  bool skip_pretrain = false;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// eta_min + (eta_max - eta_min) (1 + cos(pi e / E)) / 2
double cosine_lr(double eta_max, double eta_min, std::size_t epoch, std::size_t total_epochs);

// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(NamedTensors params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // Applies one update from the gradients currently stored on the parameters.
  void step(double lr);

  std::uint64_t steps() const noexcept { return t_; }
  const NamedTensors& first_moments() const noexcept { return m_; }
  const NamedTensors& second_moments() const noexcept { return v_; }
  const NamedTensors& parameters() const noexcept { return params_; }

  void export_state(TrainState& state) const;
  void import_state(const TrainState& state);

 private:
  NamedTensors params_;
  NamedTensors m_;
  NamedTensors v_;
  double beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
};

// Cross-entropy of the time-averaged logits. logits is [T, B, C] or [T, C].
Tensor sequence_loss(const Tensor& logits, std::span<const int> labels);

// Throws NumericError listing every parameter whose gradient has NaN/inf.
void check_finite_gradients(const NamedTensors& params);

// Scales gradients so their global L2 norm is at most max_norm. Returns the
// norm before clipping.
double clip_gradients(const NamedTensors& params, double max_norm);

struct StepMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  double spike_rate = 0.0;
  double grad_norm = 0.0;
};

// Forward in train phase, loss, backward through time, Adam update.
StepMetrics train_step(Network& net, Adam& adam, const ModelInput& batch, std::span<const int> labels, double lr,
                       const TrainConfig& cfg);

struct EvalMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  double spike_rate = 0.0;
  std::size_t samples = 0;
};

EvalMetrics evaluate(const Network& net, const std::vector<PreparedSample>& samples, const DataPipeline& pipeline,
                     std::size_t batch = 16);

// Per-timestep logits [T, B, C] for a batch of samples in eval mode.
Tensor eval_logits(const Network& net, std::span<const PreparedSample* const> samples, const DataPipeline& pipeline);

struct EpochRecord {
  std::string phase;
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
  double spike_rate = 0.0;
  std::optional<double> test_accuracy;
  double wall_s = 0.0;

  nlohmann::json to_json() const;
};

struct FitOptions {
  std::string phase = "train";
  double lr = 1e-3;
  std::size_t epochs = 1;
  const std::vector<PreparedSample>* eval_set = nullptr;
  std::ostream* log = nullptr;  // one JSON object per epoch
  // Written after every epoch, with optimizer state. With resume set and the
  // file present, training continues from it.
  std::optional<std::filesystem::path> checkpoint;
  bool resume = false;
};

std::vector<EpochRecord> fit(Network& net, const std::vector<PreparedSample>& train, const DataPipeline& pipeline,
                             const TrainConfig& cfg, const FitOptions& options);

// Fused/concat network whose visual subnet comes from `visual` and whose
// audio path comes from `audio`; everything else is freshly initialized.
std::unique_ptr<Network> init_from_pretrained(const NetworkConfig& cfg, std::uint64_t seed, const Network* visual,
                                              const Network* audio);

NetworkConfig unimodal_config(const NetworkConfig& cfg, FusionMode mode);

struct PipelineResult {
  std::unique_ptr<Network> model;
  std::unique_ptr<Network> visual_pretrained;
  std::unique_ptr<Network> audio_pretrained;
  std::vector<EpochRecord> log;
};

// Phase 1 trains the visual subnet (with a temporary head) and the audio path
// separately; phase 2 builds the configured network from them and finetunes
// everything. Unimodal configs run a single phase. When out_dir is given,
// checkpoints are written at each phase boundary and the epoch log to
// train_log.jsonl.
PipelineResult run_pipeline(const NetworkConfig& net_cfg, const TrainConfig& cfg, const DataPipeline& pipeline,
                            const std::vector<PreparedSample>& train, const std::vector<PreparedSample>* test,
                            const std::optional<std::filesystem::path>& out_dir);

}  // namespace cuesnn

#endif  // CUESNN_TRAINING_HPP_
