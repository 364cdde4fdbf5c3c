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

#include "cuesnn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cuesnn/errors.hpp"
#include "cuesnn/ops.hpp"

namespace cuesnn {

void TrainConfig::validate() const {
  if (!(lr_pretrain > 0.0) || !(lr_finetune > 0.0)) throw ConfigError("train: learning rates must be positive");
  if (epochs_pretrain == 0 || epochs_finetune == 0) throw ConfigError("train: epoch counts must be positive");
  if (batch == 0) throw ConfigError("train.batch must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train: Adam betas must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (!(eta_min >= 0.0)) throw ConfigError("train.eta_min must be non-negative");
  if (!(grad_clip >= 0.0)) throw ConfigError("train.grad_clip must be non-negative");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"lr_pretrain", lr_pretrain}, {"lr_finetune", lr_finetune}, {"epochs_pretrain", epochs_pretrain},
          {"epochs_finetune", epochs_finetune}, {"batch", batch}, {"beta1", beta1}, {"beta2", beta2}, {"eps", eps},
          {"eta_min", eta_min}, {"grad_clip", grad_clip}, {"skip_pretrain", skip_pretrain}, {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "lr_pretrain") c.lr_pretrain = value.get<double>();
      else if (key == "lr_finetune") c.lr_finetune = value.get<double>();
      else if (key == "epochs_pretrain") c.epochs_pretrain = value.get<std::size_t>();
      else if (key == "epochs_finetune") c.epochs_finetune = value.get<std::size_t>();
      else if (key == "batch") c.batch = value.get<std::size_t>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "eps") c.eps = value.get<double>();
      else if (key == "eta_min") c.eta_min = value.get<double>();
      else if (key == "grad_clip") c.grad_clip = value.get<double>();
      else if (key == "skip_pretrain") c.skip_pretrain = value.get<bool>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw ConfigError(fmt::format("train config: unknown field '{}'", key));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(fmt::format("train config field '{}': {}", key, e.what()));
    }
  }
  c.validate();
  return c;
}

double cosine_lr(double eta_max, double eta_min, std::size_t epoch, std::size_t total) {
  if (total == 0) throw ConfigError("cosine_lr: zero epochs");
  const double frac = static_cast<double>(std::min(epoch, total)) / static_cast<double>(total);
  return eta_min + 0.5 * (eta_max - eta_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

Adam::Adam(NamedTensors params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, p] : params_) {
    m_.emplace_back(name, Tensor(p.shape(), 0.0));
    v_.emplace_back(name, Tensor(p.shape(), 0.0));
  }
}

void Adam::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].second;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.values();
    auto m = m_[i].second.values();
    auto v = v_[i].second.values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g[k];
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::export_state(TrainState& state) const {
  state.adam_step = t_;
  state.adam_m.clear();
  state.adam_v.clear();
  for (const auto& [name, t] : m_) state.adam_m.emplace_back(name, t.clone());
  for (const auto& [name, t] : v_) state.adam_v.emplace_back(name, t.clone());
}

void Adam::import_state(const TrainState& state) {
  auto load = [](NamedTensors& dst, const NamedTensors& src, const char* which) {
    std::map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : src) by_name.emplace(name, &t);
    for (auto& [name, t] : dst) {
      auto it = by_name.find(name);
      if (it == by_name.end() || it->second->shape() != t.shape()) {
        throw ConfigError(fmt::format("optimizer state lacks a matching {} moment for '{}'", which, name));
      }
      const auto v = it->second->values();
      std::copy(v.begin(), v.end(), t.values().begin());
    }
  };
  load(m_, state.adam_m, "first");
  load(v_, state.adam_v, "second");
  t_ = state.adam_step;
}

Tensor sequence_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() == 2) return cross_entropy(time_mean(reshape(logits, {logits.dim(0), 1, logits.dim(1)})), labels);
  if (logits.rank() != 3) throw DimensionError(fmt::format("sequence_loss expects [T, B, C] or [T, C], got {}", shape_str(logits.shape())));
  return cross_entropy(time_mean(logits), labels);
}

void check_finite_gradients(const NamedTensors& params) {
  std::vector<std::string> bad;
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    const auto n = std::count_if(g.begin(), g.end(), [](double x) { return !std::isfinite(x); });
    if (n > 0) bad.push_back(fmt::format("{} ({} of {})", name, n, g.size()));
  }
  if (!bad.empty()) throw NumericError(fmt::format("non-finite gradients in: {}", fmt::join(bad, ", ")));
}

double clip_gradients(const NamedTensors& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (const auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.grad_mut()) g *= f;
    }
  }
  return norm;
}

StepMetrics train_step(Network& net, Adam& adam, const ModelInput& batch, std::span<const int> labels, double lr,
                       const TrainConfig& cfg) {
  for (const auto& [name, p] : adam.parameters()) p.zero_grad();
  SpikeRecorder spikes;
  ForwardContext ctx;
  ctx.phase = Phase::kTrain;
  ctx.spikes = &spikes;
  GradTape tape;
  Tensor logits, loss;
  {
    auto rec = tape.record();
    logits = net.forward(ctx, batch);
    loss = sequence_loss(logits, labels);
  }
  tape.backward(loss);
  check_finite_gradients(adam.parameters());
  StepMetrics m;
  m.grad_norm = clip_gradients(adam.parameters(), cfg.grad_clip);
  adam.step(lr);
  m.loss = loss.item();
  const auto pred = predict_batch(logits.detach());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  m.accuracy = static_cast<double>(hit) / static_cast<double>(pred.size());
  m.spike_rate = spikes.overall_rate();
  return m;
}

Tensor eval_logits(const Network& net, std::span<const PreparedSample* const> samples, const DataPipeline& pipeline) {
  ModelInput in = make_batch(samples, pipeline, nullptr);
  ForwardContext ctx;
  return net.forward(ctx, in);
}

EvalMetrics evaluate(const Network& net, const std::vector<PreparedSample>& samples, const DataPipeline& pipeline,
                     std::size_t batch) {
  if (samples.empty()) throw EmptyInputError("evaluate: no samples");
  EvalMetrics out;
  double loss_sum = 0.0, rate_sum = 0.0;
  std::size_t hit = 0, batches = 0;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    std::vector<const PreparedSample*> chunk;
    std::vector<int> labels;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch); ++i) {
      chunk.push_back(&samples[i]);
      labels.push_back(samples[i].label);
    }
    SpikeRecorder spikes;
    ForwardContext ctx;
    ctx.spikes = &spikes;
    const Tensor logits = net.forward(ctx, make_batch(chunk, pipeline, nullptr));
    loss_sum += sequence_loss(logits, labels).item() * static_cast<double>(chunk.size());
    rate_sum += spikes.overall_rate();
    ++batches;
    const auto pred = predict_batch(logits);
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  }
  out.samples = samples.size();
  out.loss = loss_sum / static_cast<double>(samples.size());
  out.accuracy = static_cast<double>(hit) / static_cast<double>(samples.size());
  out.spike_rate = rate_sum / static_cast<double>(batches);
  return out;
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j{{"phase", phase}, {"epoch", epoch}, {"lr", lr}, {"loss", loss}, {"accuracy", accuracy},
                   {"spike_rate", spike_rate}, {"wall_s", wall_s}};
  if (test_accuracy) j["test_accuracy"] = *test_accuracy;
  return j;
}

std::vector<EpochRecord> fit(Network& net, const std::vector<PreparedSample>& train, const DataPipeline& pipeline,
                             const TrainConfig& cfg, const FitOptions& opt) {
  cfg.validate();
  if (train.empty()) throw EmptyInputError("fit: empty training set");
  Adam adam(net.parameters(), cfg.beta1, cfg.beta2, cfg.eps);
  std::mt19937_64 rng(cfg.seed ^ fnv1a64(opt.phase));
  std::size_t first_epoch = 0;
  if (opt.resume && opt.checkpoint && std::filesystem::exists(*opt.checkpoint)) {
    TrainState state;
    restore_checkpoint(net, *opt.checkpoint, &state);
    if (state.phase != opt.phase) {
      throw ConfigError(fmt::format("checkpoint {} belongs to phase '{}', not '{}'", opt.checkpoint->string(), state.phase,
                                    opt.phase));
    }
    adam.import_state(state);
    std::istringstream(state.rng_state) >> rng;
    first_epoch = state.epoch;
    spdlog::info("{}: resuming after epoch {}", opt.phase, first_epoch);
  }

  std::vector<std::size_t> order(train.size());
  std::vector<EpochRecord> records;
  for (std::size_t epoch = first_epoch; epoch < opt.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = cosine_lr(opt.lr, cfg.eta_min, epoch, opt.epochs);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss = 0.0, acc = 0.0, rate = 0.0;
    std::size_t seen = 0, steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      std::vector<const PreparedSample*> chunk;
      std::vector<int> labels;
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch); ++i) {
        chunk.push_back(&train[order[i]]);
        labels.push_back(train[order[i]].label);
      }
      const ModelInput batch = make_batch(chunk, pipeline, &rng);
      const StepMetrics m = train_step(net, adam, batch, labels, lr, cfg);
      loss += m.loss * static_cast<double>(chunk.size());
      acc += m.accuracy * static_cast<double>(chunk.size());
      rate += m.spike_rate;
      seen += chunk.size();
      ++steps;
    }
    EpochRecord r;
    r.phase = opt.phase;
    r.epoch = epoch + 1;
    r.lr = lr;
    r.loss = loss / static_cast<double>(seen);
    r.accuracy = acc / static_cast<double>(seen);
    r.spike_rate = rate / static_cast<double>(steps);
    if (opt.eval_set && !opt.eval_set->empty()) r.test_accuracy = evaluate(net, *opt.eval_set, pipeline).accuracy;
    r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("{} epoch {}/{}: loss {:.4f} acc {:.3f} lr {:.2e}{}", opt.phase, r.epoch, opt.epochs, r.loss, r.accuracy,
                 r.lr, r.test_accuracy ? fmt::format(" test {:.3f}", *r.test_accuracy) : std::string());
    if (opt.log) *opt.log << r.to_json().dump() << std::endl;
    if (opt.checkpoint) {
      TrainState state;
      state.phase = opt.phase;
      state.epoch = epoch + 1;
      adam.export_state(state);
      std::ostringstream rs;
      rs << rng;
      state.rng_state = rs.str();
      save_checkpoint(*opt.checkpoint, net, &state);
    }
    records.push_back(std::move(r));
  }
  return records;
}

NetworkConfig unimodal_config(const NetworkConfig& cfg, FusionMode mode) {
  NetworkConfig c = cfg;
  c.fusion_mode = mode;
  return c;
}

std::unique_ptr<Network> init_from_pretrained(const NetworkConfig& cfg, std::uint64_t seed, const Network* visual,
                                              const Network* audio) {
  auto net = std::make_unique<Network>(cfg, seed);
  if (visual) {
    const auto copied = copy_matching_tensors(*net, *visual);
    spdlog::debug("initialized {} tensors from the visual subnet", copied.size());
  }
  if (audio) {
    const auto copied = copy_matching_tensors(*net, *audio);
    spdlog::debug("initialized {} tensors from the audio subnet", copied.size());
  }
  return net;
}

PipelineResult run_pipeline(const NetworkConfig& net_cfg, const TrainConfig& cfg, const DataPipeline& pipeline,
                            const std::vector<PreparedSample>& train, const std::vector<PreparedSample>* test,
                            const std::optional<std::filesystem::path>& out_dir) {
  net_cfg.validate();
  cfg.validate();
  std::ofstream log_file;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    log_file.open(*out_dir / "train_log.jsonl");
    if (!log_file) throw IoError(fmt::format("cannot write {}", (*out_dir / "train_log.jsonl").string()));
  }
  auto ckpt = [&](const std::string& name) -> std::optional<std::filesystem::path> {
    if (!out_dir) return std::nullopt;
    return *out_dir / name;
  };
  auto phase_options = [&](const std::string& phase, double lr, std::size_t epochs) {
    FitOptions o;
    o.phase = phase;
    o.lr = lr;
    o.epochs = epochs;
    o.eval_set = test;
    o.log = out_dir ? &log_file : nullptr;
    return o;
  };

  PipelineResult result;
  auto append = [&](std::vector<EpochRecord> r) {
    for (auto& e : r) result.log.push_back(std::move(e));
  };

  const FusionMode mode = net_cfg.fusion_mode;
  if (mode == FusionMode::kAudioOnly || mode == FusionMode::kVisualOnly) {
    result.model = std::make_unique<Network>(net_cfg, cfg.seed);
    append(fit(*result.model, train, pipeline, cfg, phase_options(std::string(to_string(mode)), cfg.lr_pretrain, cfg.epochs_pretrain)));
    if (auto p = ckpt("final.ckpt")) save_checkpoint(*p, *result.model);
    return result;
  }

  if (cfg.skip_pretrain) {
    spdlog::warn("pretraining skipped: the fused network starts from random weights");
  } else {
    result.visual_pretrained = std::make_unique<Network>(unimodal_config(net_cfg, FusionMode::kVisualOnly), cfg.seed + 1);
    append(fit(*result.visual_pretrained, train, pipeline, cfg, phase_options("pretrain_visual", cfg.lr_pretrain, cfg.epochs_pretrain)));
    if (auto p = ckpt("pretrain_visual.ckpt")) save_checkpoint(*p, *result.visual_pretrained);

    result.audio_pretrained = std::make_unique<Network>(unimodal_config(net_cfg, FusionMode::kAudioOnly), cfg.seed + 2);
    append(fit(*result.audio_pretrained, train, pipeline, cfg, phase_options("pretrain_audio", cfg.lr_pretrain, cfg.epochs_pretrain)));
    if (auto p = ckpt("pretrain_audio.ckpt")) save_checkpoint(*p, *result.audio_pretrained);
  }
  result.model = init_from_pretrained(net_cfg, cfg.seed + 3, result.visual_pretrained.get(), result.audio_pretrained.get());
  append(fit(*result.model, train, pipeline, cfg, phase_options("finetune", cfg.lr_finetune, cfg.epochs_finetune)));
  if (auto p = ckpt("final.ckpt")) save_checkpoint(*p, *result.model);
  return result;
}

}  // namespace cuesnn
