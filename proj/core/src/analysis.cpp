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

#include "cuesnn/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <map>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "cuesnn/checkpoint.hpp"
#include "cuesnn/errors.hpp"

namespace cuesnn {

double energy_mj(double mults, double adds) { return (kMultEnergyPj * mults + kAddEnergyPj * adds) * 1e-9; }

EnergyReport energy_from_counts(std::uint64_t mults, std::uint64_t adds) {
  EnergyReport r;
  r.mult_count = mults;
  r.add_count = adds;
  r.energy_mj = energy_mj(static_cast<double>(mults), static_cast<double>(adds));
  return r;
}

nlohmann::json EnergyReport::to_json() const {
  nlohmann::json layers_j = nlohmann::json::array();
  for (const auto& l : layers) {
    layers_j.push_back({{"layer", l.layer}, {"mults", l.mults}, {"adds", l.adds}, {"energy_mj", l.energy_mj}});
  }
  nlohmann::json rates = nlohmann::json::array();
  for (const auto& e : spike_rates) rates.push_back({{"layer", e.layer}, {"rate", e.rate()}, {"elements", e.elements}});
  return {{"mult_count", mult_count},   {"add_count", add_count}, {"energy_mj", energy_mj},
          {"add_pj", kAddEnergyPj},     {"mult_pj", kMultEnergyPj}, {"layers", layers_j},
          {"spike_rates", rates},       {"overall_spike_rate", overall_spike_rate}};
}

std::string EnergyReport::to_text() const {
  std::string out = fmt::format("{:<28} {:>14} {:>14} {:>14}\n", "layer", "mults", "adds", "energy_mJ");
  for (const auto& l : layers) out += fmt::format("{:<28} {:>14} {:>14} {:>14.6e}\n", l.layer, l.mults, l.adds, l.energy_mj);
  out += fmt::format("{:<28} {:>14} {:>14} {:>14.6e}\n", "total", mult_count, add_count, energy_mj);
  if (!spike_rates.empty()) {
    out += fmt::format("\n{:<28} {:>10}\n", "spiking layer", "rate");
    for (const auto& e : spike_rates) out += fmt::format("{:<28} {:>10.4f}\n", e.layer, e.rate());
    out += fmt::format("{:<28} {:>10.4f}\n", "overall", overall_spike_rate);
  }
  return out;
}

EnergyReport estimate_energy(const Network& net, const ModelInput& input, Phase phase) {
  if (phase != Phase::kEval) {
    throw ContractError("estimate_energy needs the eval phase: training-mode batch norm cannot be folded into the affine layers");
  }
  OpCounter ops;
  SpikeRecorder spikes;
  ForwardContext ctx;
  ctx.ops = &ops;
  ctx.spikes = &spikes;
  net.forward(ctx, input);
  EnergyReport r;
  for (const auto& [layer, c] : ops.layers()) {
    r.layers.push_back(LayerEnergy{layer, c.mults, c.adds, energy_mj(static_cast<double>(c.mults), static_cast<double>(c.adds))});
    r.mult_count += c.mults;
    r.add_count += c.adds;
  }
  r.energy_mj = energy_mj(static_cast<double>(r.mult_count), static_cast<double>(r.add_count));
  r.spike_rates = spikes.entries();
  r.overall_spike_rate = spikes.overall_rate();
  return r;
}

nlohmann::json CausalityVerdict::to_json() const {
  nlohmann::json j{{"pass", pass}, {"probes", probes}, {"trials", trials}, {"forwards", forwards}};
  if (first_violation) {
    const auto& v = *first_violation;
    j["first_violation"] = {{"timestep", v.timestep},
                            {"trial", v.trial},
                            {"tensor", v.tensor},
                            {"first_changed_step", v.first_changed_step},
                            {"max_abs_diff", v.max_abs_diff}};
  } else {
    j["first_violation"] = nullptr;
  }
  return j;
}

std::string CausalityVerdict::to_text() const {
  std::string out = fmt::format("causality: {} ({} probe timesteps x {} trials, {} forwards)\n", pass ? "PASS" : "FAIL",
                                probes, trials, forwards);
  if (first_violation) {
    const auto& v = *first_violation;
    out += fmt::format("first violation: probe t={} trial {}: {} changed at step {} (max |diff| {:.6g})\n", v.timestep,
                       v.trial, v.tensor, v.first_changed_step, v.max_abs_diff);
  }
  return out;
}

PreparedSample perturb_future(const PreparedSample& sample, std::size_t t, const DataPipeline& pipeline,
                              std::mt19937_64& rng) {
  const std::size_t steps = pipeline.time_steps;
  if (t == 0 || t > steps) throw ContractError(fmt::format("perturb_future: t = {} outside 1..{}", t, steps));
  PreparedSample out;
  out.label = sample.label;
  out.audio = sample.audio;

  const EventStream& ev = sample.events;
  out.events.width = ev.width;
  out.events.height = ev.height;
  if (!ev.events.empty()) {
    const std::uint64_t t_first = ev.events.front().timestamp_us;
    const std::uint64_t t_last = ev.events.back().timestamp_us;
    const std::uint64_t span = t_last - t_first;
    std::size_t future = 0;
    for (const Event& e : ev.events) {
      if (event_bin(e.timestamp_us, t_first, t_last, steps) < t) out.events.events.push_back(e);
      else ++future;
    }
    if (span > 0 && t < steps) {
      // First timestamp that lands in bin t.
      const auto num = static_cast<unsigned __int128>(t) * span;
      const auto offset = static_cast<std::uint64_t>((num + steps - 1) / steps);
      const std::uint64_t lo = t_first + offset;
      std::uniform_int_distribution<std::uint64_t> when(lo, t_last);
      std::uniform_int_distribution<int> px(0, ev.width - 1);
      std::uniform_int_distribution<int> py(0, ev.height - 1);
      std::bernoulli_distribution pol(0.5);
      const std::size_t base = std::max<std::size_t>(future, 50);
      std::uniform_int_distribution<std::size_t> count(base / 2, base + base / 2);
      const std::size_t n = count(rng);
      for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t ts = i == 0 ? t_last : when(rng);
        out.events.events.push_back(Event{ts, static_cast<std::uint16_t>(px(rng)), static_cast<std::uint16_t>(py(rng)),
                                          static_cast<std::uint8_t>(pol(rng))});
      }
      std::stable_sort(out.events.events.begin(), out.events.events.end(),
                       [](const Event& a, const Event& b) { return a.timestamp_us < b.timestamp_us; });
    } else if (t < steps) {
      out.events = ev;
    }
  }

  out.fbank = sample.fbank.clone();
  auto f = out.fbank.values();
  const std::size_t feat = out.fbank.dim(1);
  double mean = 0.0, sq = 0.0;
  for (double v : sample.fbank.values()) {
    mean += v;
    sq += v * v;
  }
  mean /= static_cast<double>(f.size());
  const double sd = std::max(1.0, std::sqrt(std::max(0.0, sq / static_cast<double>(f.size()) - mean * mean)));
  std::normal_distribution<double> gauss(mean, sd);
  for (std::size_t i = t * feat; i < f.size(); ++i) f[i] = gauss(rng);
  return out;
}

namespace {

struct Trace {
  Tensor phi, psi, logits;
};

Trace trace(const Network& net, const PreparedSample& s, const DataPipeline& pipeline) {
  ForwardContext ctx;
  Trace tr;
  tr.logits = net.forward_traced(ctx, make_batch(s, pipeline), &tr.phi, &tr.psi);
  return tr;
}

// First step < t at which a and b differ (bitwise), with the largest
// absolute difference over steps < t.
std::optional<std::pair<std::size_t, double>> prefix_diff(const Tensor& a, const Tensor& b, std::size_t t) {
  if (!a.defined()) return std::nullopt;
  const std::size_t per_step = a.numel() / a.dim(0);
  const auto va = a.values();
  const auto vb = b.values();
  std::optional<std::size_t> first;
  double max_diff = 0.0;
  for (std::size_t i = 0; i < t * per_step; ++i) {
    if (std::memcmp(&va[i], &vb[i], sizeof(double)) != 0) {
      if (!first) first = i / per_step;
      max_diff = std::max(max_diff, std::abs(va[i] - vb[i]));
    }
  }
  if (!first) return std::nullopt;
  return std::make_pair(*first, max_diff);
}

}  // namespace

CausalityVerdict verify_causality(const Network& net, const PreparedSample& sample, const DataPipeline& pipeline,
                                  std::mt19937_64& rng, const CausalityOptions& options) {
  const std::size_t steps = pipeline.time_steps;
  if (steps != net.config().time_steps) {
    throw ConfigError(fmt::format("pipeline has {} timesteps but the network {}", steps, net.config().time_steps));
  }
  std::vector<std::size_t> probes = options.timesteps;
  if (probes.empty()) {
    for (std::size_t t = 1; t <= steps; ++t) probes.push_back(t);
  }
  CausalityVerdict verdict;
  verdict.probes = probes.size();
  verdict.trials = options.trials;
  const Trace base = trace(net, sample, pipeline);
  ++verdict.forwards;
  for (std::size_t t : probes) {
    if (t == 0 || t > steps) throw ContractError(fmt::format("probe timestep {} outside 1..{}", t, steps));
    if (t == steps) continue;  // nothing after the last segment
    for (std::size_t trial = 0; trial < options.trials; ++trial) {
      const Trace alt = trace(net, perturb_future(sample, t, pipeline, rng), pipeline);
      ++verdict.forwards;
      std::optional<CausalityViolation> worst;
      const std::pair<const char*, std::pair<const Tensor*, const Tensor*>> checks[] = {
          {"vcen.phi", {&base.phi, &alt.phi}}, {"audio.psi", {&base.psi, &alt.psi}}, {"logits", {&base.logits, &alt.logits}}};
      for (const auto& [name, pair] : checks) {
        if (auto d = prefix_diff(*pair.first, *pair.second, t)) {
          if (!worst || d->first + 1 < worst->first_changed_step) {
            worst = CausalityViolation{t, trial, name, d->first + 1, d->second};
          }
        }
      }
      if (worst) {
        verdict.pass = false;
        if (!verdict.first_violation) verdict.first_violation = worst;
        if (options.stop_at_first) return verdict;
      }
    }
  }
  return verdict;
}

nlohmann::json AccuracyCurve::to_json() const {
  return {{"samples", samples}, {"accuracy", accuracy}};
}

std::string AccuracyCurve::to_csv() const {
  std::string out = "t,accuracy\n";
  for (std::size_t i = 0; i < accuracy.size(); ++i) out += fmt::format("{},{:.6f}\n", i + 1, accuracy[i]);
  return out;
}

namespace {

template <typename Fn>
void for_batches(const std::vector<PreparedSample>& samples, std::size_t batch, Fn&& fn) {
  if (samples.empty()) throw EmptyInputError("no samples");
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    std::vector<const PreparedSample*> chunk;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch); ++i) chunk.push_back(&samples[i]);
    fn(chunk);
  }
}

// Zeroes every input step >= t.
ModelInput truncate_input(const ModelInput& in, std::size_t t) {
  ModelInput out{in.voxels.clone(), in.fbank.clone()};
  for (Tensor* x : {&out.voxels, &out.fbank}) {
    const std::size_t per_step = x->numel() / x->dim(0);
    auto v = x->values();
    std::fill(v.begin() + static_cast<std::ptrdiff_t>(t * per_step), v.end(), 0.0);
  }
  return out;
}

}  // namespace

AccuracyCurve accuracy_over_time(const Network& net, const std::vector<PreparedSample>& samples,
                                 const DataPipeline& pipeline, std::size_t batch) {
  const std::size_t steps = net.config().time_steps;
  std::vector<std::size_t> hits(steps, 0);
  for_batches(samples, batch, [&](const std::vector<const PreparedSample*>& chunk) {
    const Tensor logits = eval_logits(net, chunk, pipeline);
    for (std::size_t t = 1; t <= steps; ++t) {
      const auto pred = predict_batch(logits, t);
      for (std::size_t i = 0; i < chunk.size(); ++i) hits[t - 1] += pred[i] == chunk[i]->label;
    }
  });
  AccuracyCurve c;
  c.samples = samples.size();
  for (std::size_t h : hits) c.accuracy.push_back(static_cast<double>(h) / static_cast<double>(samples.size()));
  return c;
}

AccuracyCurve accuracy_over_time_truncated(const Network& net, const std::vector<PreparedSample>& samples,
                                           const DataPipeline& pipeline, std::size_t batch) {
  const std::size_t steps = net.config().time_steps;
  std::vector<std::size_t> hits(steps, 0);
  for_batches(samples, batch, [&](const std::vector<const PreparedSample*>& chunk) {
    const ModelInput full = make_batch(chunk, pipeline, nullptr);
    for (std::size_t t = 1; t <= steps; ++t) {
      ForwardContext ctx;
      const Tensor logits = net.forward(ctx, truncate_input(full, t));
      const auto pred = predict_batch(logits, t);
      for (std::size_t i = 0; i < chunk.size(); ++i) hits[t - 1] += pred[i] == chunk[i]->label;
    }
  });
  AccuracyCurve c;
  c.samples = samples.size();
  for (std::size_t h : hits) c.accuracy.push_back(static_cast<double>(h) / static_cast<double>(samples.size()));
  return c;
}

std::vector<SpikeRecorder::Entry> spike_rates(const Network& net, const std::vector<PreparedSample>& samples,
                                              const DataPipeline& pipeline, std::size_t batch) {
  SpikeRecorder rec;
  for_batches(samples, batch, [&](const std::vector<const PreparedSample*>& chunk) {
    ForwardContext ctx;
    ctx.spikes = &rec;
    net.forward(ctx, make_batch(chunk, pipeline, nullptr));
  });
  // Merge repeated layer entries from different batches.
  std::vector<SpikeRecorder::Entry> merged;
  std::map<std::string, std::size_t> index;
  for (const auto& e : rec.entries()) {
    auto [it, inserted] = index.emplace(e.layer, merged.size());
    if (inserted) {
      merged.push_back(e);
    } else {
      merged[it->second].ones += e.ones;
      merged[it->second].elements += e.elements;
    }
  }
  return merged;
}

void calibrate_batchnorm(const Network& net, const ModelInput& batch) {
  ForwardContext ctx;
  ctx.phase = Phase::kTrain;
  ctx.calibrate_batchnorm = true;
  // In the train phase every layer already normalizes with the batch
  // statistics, so one pass leaves each layer with the statistics of exactly
  // the inputs it will see in the eval phase.
  net.forward(ctx, batch);
}

nlohmann::json AblationTable::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"cue_positions", r.cue_positions}, {"accuracy", r.accuracy}, {"energy_mj", r.energy_mj},
                 {"parameters", r.parameters}, {"wall_s", r.wall_s}});
  }
  return j;
}

std::string AblationTable::to_text() const {
  std::string out = fmt::format("{:<16} {:>10} {:>14} {:>12} {:>10}\n", "cue_positions", "accuracy", "energy_mJ", "parameters", "wall_s");
  for (const auto& r : rows) {
    out += fmt::format("{:<16} {:>10.4f} {:>14.6e} {:>12} {:>10.1f}\n", fmt::format("{{{}}}", fmt::join(r.cue_positions, ",")),
                       r.accuracy, r.energy_mj, r.parameters, r.wall_s);
  }
  return out;
}

AblationTable run_cue_ablation(const NetworkConfig& base, const TrainConfig& cfg, const DataPipeline& pipeline,
                               const std::vector<PreparedSample>& train, const std::vector<PreparedSample>& test,
                               const std::vector<std::vector<int>>& position_sets) {
  if (position_sets.empty()) throw ConfigError("cue ablation needs at least one position set");
  if (test.empty()) throw EmptyInputError("cue ablation needs a test set");
  NetworkConfig fused = base;
  fused.fusion_mode = FusionMode::kHiAvsnn;
  for (const auto& ps : position_sets) {
    NetworkConfig c = fused;
    c.set_cue_positions(ps);
    c.validate();
  }

  std::unique_ptr<Network> visual, audio;
  if (!cfg.skip_pretrain) {
    FitOptions o;
    o.lr = cfg.lr_pretrain;
    o.epochs = cfg.epochs_pretrain;
    o.phase = "pretrain_visual";
    visual = std::make_unique<Network>(unimodal_config(fused, FusionMode::kVisualOnly), cfg.seed + 1);
    fit(*visual, train, pipeline, cfg, o);
    o.phase = "pretrain_audio";
    audio = std::make_unique<Network>(unimodal_config(fused, FusionMode::kAudioOnly), cfg.seed + 2);
    fit(*audio, train, pipeline, cfg, o);
  }

  AblationTable table;
  for (const auto& ps : position_sets) {
    const auto t0 = std::chrono::steady_clock::now();
    NetworkConfig c = fused;
    c.set_cue_positions(ps);
    auto net = init_from_pretrained(c, cfg.seed + 3, visual.get(), audio.get());
    FitOptions o;
    o.phase = fmt::format("finetune_cue_{}", fmt::join(ps, "_"));
    o.lr = cfg.lr_finetune;
    o.epochs = cfg.epochs_finetune;
    fit(*net, train, pipeline, cfg, o);
    AblationRow row;
    row.cue_positions = c.cue_positions;
    row.accuracy = evaluate(*net, test, pipeline).accuracy;
    row.energy_mj = estimate_energy(*net, make_batch(test.front(), pipeline)).energy_mj;
    row.parameters = net->parameter_count();
    row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("cue positions {{{}}}: accuracy {:.4f}", fmt::join(row.cue_positions, ","), row.accuracy);
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace cuesnn
