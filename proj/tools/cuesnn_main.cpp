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

// Command-line driver: dataset generation, training, evaluation, energy,
// causality and recognition-over-time reports, cue-position ablation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "cuesnn/analysis.hpp"
#include "cuesnn/checkpoint.hpp"
#include "cuesnn/dataset.hpp"
#include "cuesnn/errors.hpp"
#include "cuesnn/model.hpp"
#include "cuesnn/synth.hpp"
#include "cuesnn/training.hpp"

namespace fs = std::filesystem;
using namespace cuesnn;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kVerdictFailed = 1;
constexpr int kError = 2;

struct Flags {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string ckpt;
  std::string snr;
  std::string cue_positions;
  std::string fusion_mode;
  std::optional<std::size_t> upto_t;
  std::size_t trials = 20;
  std::size_t sample = 0;
  std::string sabotage;
  std::string cue_sets = "3;2,3;1,2,3;1,2,3,4";
  bool cross_check = false;
  bool verbose = false;
};

nlohmann::json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError(fmt::format("cannot open config {}", path));
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path, e.what()));
  }
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "config_error";
  if (dynamic_cast<const IoError*>(&e)) return "io_error";
  if (dynamic_cast<const DimensionError*>(&e)) return "dimension_error";
  if (dynamic_cast<const ContractError*>(&e)) return "contract_error";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric_error";
  if (dynamic_cast<const StateError*>(&e)) return "state_error";
  if (dynamic_cast<const EmptyInputError*>(&e)) return "empty_input";
  if (dynamic_cast<const AlignmentError*>(&e)) return "alignment_error";
  if (dynamic_cast<const DegenerateInputError*>(&e)) return "degenerate_input";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "io_error";
  return "error";
}

std::vector<int> parse_positions(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || v < 1 || v > 4) {
      throw ConfigError(fmt::format("--cue-positions: '{}' is not one of 1, 2, 3, 4", item));
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("--cue-positions: empty list");
  return out;
}

// Everything a run needs, after applying flag overrides to the config file.
struct RunConfig {
  std::uint64_t seed = 0;
  NetworkConfig network;
  TrainConfig train;
  DataPipeline data;
  SynthSpec synth;

  nlohmann::json to_json() const {
    return {{"seed", seed}, {"network", network.to_json()}, {"train", train.to_json()}, {"data", data.to_json()},
            {"synth", synth.to_json()}};
  }
};

RunConfig load_run_config(const Flags& f) {
  RunConfig rc;
  if (!f.config.empty()) {
    const auto j = read_json(f.config);
    if (!j.is_object()) throw ConfigError(fmt::format("{}: top level must be an object", f.config));
    for (const auto& [key, value] : j.items()) {
      if (key == "seed") rc.seed = value.get<std::uint64_t>();
      else if (key == "network") rc.network = NetworkConfig::from_json(value);
      else if (key == "train") rc.train = TrainConfig::from_json(value);
      else if (key == "data") rc.data = DataPipeline::from_json(value);
      else if (key == "synth") rc.synth = SynthSpec::from_json(value);
      else if (key == "$schema" || key == "description") continue;
      else throw ConfigError(fmt::format("{}: unknown section '{}'", f.config, key));
    }
  }
  if (f.seed) rc.seed = *f.seed;
  rc.train.seed = rc.seed;
  if (!f.fusion_mode.empty()) rc.network.fusion_mode = parse_fusion_mode(f.fusion_mode);
  if (!f.cue_positions.empty()) rc.network.set_cue_positions(parse_positions(f.cue_positions));
  if (!f.snr.empty()) {
    if (f.snr == "clean" || f.snr == "inf") {
      rc.synth.snr_db.reset();
    } else {
      try {
        rc.synth.snr_db = std::stod(f.snr);
      } catch (const std::exception&) {
        throw ConfigError(fmt::format("--snr: '{}' is not a number or 'clean'", f.snr));
      }
    }
  }
  rc.data.time_steps = rc.network.time_steps;
  rc.synth.time_steps = rc.network.time_steps;
  rc.network.validate();
  rc.synth.validate();
  return rc;
}

// Writes into a temporary sibling directory that replaces `out` on commit.
class OutputDir {
 public:
  explicit OutputDir(const std::string& out) : final_(out) {
    if (out.empty()) throw ConfigError("--out is required");
    fs::path parent = final_.parent_path();
    if (parent.empty()) parent = ".";
    fs::create_directories(parent);
    tmp_ = parent / fmt::format(".{}.tmp-{}", final_.filename().string(), std::random_device{}());
    fs::create_directories(tmp_);
  }
  ~OutputDir() {
    std::error_code ec;
    if (!committed_) fs::remove_all(tmp_, ec);
  }
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  const fs::path& path() const { return tmp_; }
  void commit() {
    if (fs::exists(final_)) fs::remove_all(final_);
    fs::rename(tmp_, final_);
    committed_ = true;
  }

 private:
  fs::path final_;
  fs::path tmp_;
  bool committed_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError(fmt::format("cannot write {}", path.string()));
  os << text;
}

void write_manifest_file(const fs::path& dir, const std::string& command, const Flags& f, const nlohmann::json& config) {
  nlohmann::json flags{{"config", f.config}, {"data", f.data}, {"out", f.out}, {"ckpt", f.ckpt}};
  if (!f.snr.empty()) flags["snr"] = f.snr;
  if (!f.cue_positions.empty()) flags["cue_positions"] = f.cue_positions;
  if (!f.fusion_mode.empty()) flags["fusion_mode"] = f.fusion_mode;
  if (f.upto_t) flags["upto_t"] = *f.upto_t;
  write_text(dir / "run_manifest.json",
             nlohmann::json{{"command", command}, {"flags", flags}, {"config", config}}.dump(2) + "\n");
}

std::vector<PreparedSample> load_split(const Flags& f, const DataPipeline& data, const std::string& split, bool keep_audio) {
  if (f.data.empty()) throw ConfigError("--data is required");
  const fs::path manifest = fs::path(f.data) / split / "manifest.jsonl";
  spdlog::info("loading {}", manifest.string());
  return load_manifest_samples(manifest, data, keep_audio);
}

// Seed of the run that produced a checkpoint, taken from the flag or from the
// run manifest written next to it.
std::uint64_t seed_for(const Flags& f) {
  if (f.seed) return *f.seed;
  if (f.ckpt.empty()) return 0;
  const fs::path manifest = fs::path(f.ckpt).parent_path() / "run_manifest.json";
  if (!fs::exists(manifest)) return 0;
  const auto j = read_json(manifest.string());
  return j.at("config").value("seed", std::uint64_t{0});
}

Checkpoint require_checkpoint(const Flags& f) {
  if (f.ckpt.empty()) throw ConfigError("--ckpt is required");
  return load_checkpoint(f.ckpt);
}

DataPipeline pipeline_for(const Flags& f, const NetworkConfig& net) {
  DataPipeline p;
  if (!f.config.empty()) {
    const auto j = read_json(f.config);
    if (j.contains("data")) p = DataPipeline::from_json(j.at("data"));
  }
  p.time_steps = net.time_steps;
  return p;
}

int cmd_synth_data(const Flags& f) {
  RunConfig rc = load_run_config(f);
  OutputDir out(f.out);
  write_synth_dataset(out.path(), rc.synth, rc.seed);
  write_manifest_file(out.path(), "synth-data", f, {{"seed", rc.seed}, {"synth", rc.synth.to_json()}});
  out.commit();
  std::cout << nlohmann::json{{"out", f.out},
                              {"train", split_size(rc.synth, Split::kTrain)},
                              {"test", split_size(rc.synth, Split::kTest)},
                              {"seed", rc.seed}}
                   .dump()
            << "\n";
  return kOk;
}

int cmd_train(const Flags& f) {
  RunConfig rc = load_run_config(f);
  const auto train = load_split(f, rc.data, "train", rc.data.augment_audio);
  const auto test = load_split(f, rc.data, "test", false);
  OutputDir out(f.out);
  write_manifest_file(out.path(), "train", f, rc.to_json());
  const PipelineResult r = run_pipeline(rc.network, rc.train, rc.data, train, &test, out.path());
  const EvalMetrics m = evaluate(*r.model, test, rc.data);
  const nlohmann::json summary{{"seed", rc.seed},
                               {"fusion_mode", std::string(to_string(rc.network.fusion_mode))},
                               {"test_accuracy", m.accuracy},
                               {"test_loss", m.loss},
                               {"epochs", r.log.size()}};
  write_text(out.path() / "summary.json", summary.dump(2) + "\n");
  out.commit();
  std::cout << summary.dump() << "\n";
  return kOk;
}

int cmd_eval(const Flags& f) {
  Checkpoint ck = require_checkpoint(f);
  const DataPipeline data = pipeline_for(f, ck.config);
  const auto test = load_split(f, data, "test", false);
  const EvalMetrics m = evaluate(*ck.network, test, data);
  const nlohmann::json j{{"accuracy", m.accuracy}, {"loss", m.loss}, {"samples", m.samples},
                         {"spike_rate", m.spike_rate}, {"chance", 1.0 / static_cast<double>(ck.config.num_classes)},
                         {"seed", seed_for(f)}};
  std::cout << j.dump() << "\n";
  if (!f.out.empty()) {
    OutputDir out(f.out);
    write_text(out.path() / "eval.json", j.dump(2) + "\n");
    write_manifest_file(out.path(), "eval", f, ck.config.to_json());
    out.commit();
  }
  return kOk;
}

int cmd_energy(const Flags& f) {
  Checkpoint ck = require_checkpoint(f);
  const DataPipeline data = pipeline_for(f, ck.config);
  const auto test = load_split(f, data, "test", false);
  if (f.sample >= test.size()) throw ConfigError(fmt::format("--sample {} but the test split has {} samples", f.sample, test.size()));
  const EnergyReport r = estimate_energy(*ck.network, make_batch(test[f.sample], data));
  std::cout << r.to_text();
  if (!f.out.empty()) {
    OutputDir out(f.out);
    nlohmann::json j = r.to_json();
    j["seed"] = seed_for(f);
    write_text(out.path() / "energy.json", j.dump(2) + "\n");
    write_text(out.path() / "energy.txt", r.to_text());
    write_manifest_file(out.path(), "energy", f, ck.config.to_json());
    out.commit();
  }
  return kOk;
}

int cmd_causality(const Flags& f) {
  std::unique_ptr<Network> net;
  NetworkConfig cfg;
  std::uint64_t seed = seed_for(f);
  if (!f.ckpt.empty()) {
    Checkpoint ck = load_checkpoint(f.ckpt);
    cfg = ck.config;
    net = std::move(ck.network);
  } else {
    RunConfig rc = load_run_config(f);
    cfg = rc.network;
    seed = rc.seed;
    net = std::make_unique<Network>(cfg, seed);
  }
  DataPipeline data = pipeline_for(f, cfg);
  std::vector<PreparedSample> samples;
  if (!f.data.empty()) {
    samples = load_split(f, data, "test", false);
  } else {
    SynthSpec spec;
    spec.time_steps = cfg.time_steps;
    spec.num_classes = std::max<std::size_t>(4, cfg.num_classes - cfg.num_classes % 2);
    spec.train_per_class = 1;
    spec.test_per_class = 1;
    for (std::size_t i = 0; i < 4; ++i) {
      AvSample s = synth_sample(spec, seed, Split::kTest, i);
      samples.push_back(prepare_sample(std::move(s.events), std::move(s.audio), s.label, data, false));
    }
  }
  if (f.ckpt.empty()) {
    // A fresh network has never seen data; give batch norm real statistics.
    std::vector<const PreparedSample*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    calibrate_batchnorm(*net, make_batch(ptrs, data, nullptr));
  }
  if (f.sabotage == "mask") {
    net->set_attention_causal(false);
  } else if (f.sabotage == "leak") {
    data.voxelize.leak_future_bins = 1;
  } else if (!f.sabotage.empty()) {
    throw ConfigError(fmt::format("--sabotage must be 'mask' or 'leak', got '{}'", f.sabotage));
  }
  std::mt19937_64 rng(seed);
  CausalityOptions opt;
  opt.trials = f.trials;
  if (f.upto_t) opt.timesteps = {*f.upto_t};
  const CausalityVerdict v = verify_causality(*net, samples.at(f.sample % samples.size()), data, rng, opt);
  std::cout << v.to_text();
  if (!f.out.empty()) {
    OutputDir out(f.out);
    nlohmann::json j = v.to_json();
    j["seed"] = seed;
    write_text(out.path() / "causality.json", j.dump(2) + "\n");
    write_manifest_file(out.path(), "causality", f, cfg.to_json());
    out.commit();
  }
  return v.pass ? kOk : kVerdictFailed;
}

int cmd_curve(const Flags& f) {
  Checkpoint ck = require_checkpoint(f);
  const DataPipeline data = pipeline_for(f, ck.config);
  const auto test = load_split(f, data, "test", false);
  const AccuracyCurve c = accuracy_over_time(*ck.network, test, data);
  nlohmann::json j = c.to_json();
  j["seed"] = seed_for(f);
  if (f.upto_t) {
    if (*f.upto_t == 0 || *f.upto_t > c.accuracy.size()) throw ConfigError(fmt::format("--upto-t {} outside 1..{}", *f.upto_t, c.accuracy.size()));
    j["upto_t"] = *f.upto_t;
    j["accuracy_at_upto_t"] = c.accuracy[*f.upto_t - 1];
  }
  if (f.cross_check) {
    const AccuracyCurve trunc = accuracy_over_time_truncated(*ck.network, test, data);
    j["truncated_accuracy"] = trunc.accuracy;
    j["truncated_identical"] = trunc.accuracy == c.accuracy;
  }
  std::cout << c.to_csv();
  if (!f.out.empty()) {
    OutputDir out(f.out);
    write_text(out.path() / "curve.csv", c.to_csv());
    write_text(out.path() / "curve.json", j.dump(2) + "\n");
    write_manifest_file(out.path(), "curve", f, ck.config.to_json());
    out.commit();
  }
  return kOk;
}

int cmd_ablate(const Flags& f) {
  RunConfig rc = load_run_config(f);
  std::vector<std::vector<int>> sets;
  std::stringstream ss(f.cue_sets);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (!item.empty()) sets.push_back(parse_positions(item));
  }
  const auto train = load_split(f, rc.data, "train", rc.data.augment_audio);
  const auto test = load_split(f, rc.data, "test", false);
  OutputDir out(f.out);
  write_manifest_file(out.path(), "ablate", f, rc.to_json());
  const AblationTable t = run_cue_ablation(rc.network, rc.train, rc.data, train, test, sets);
  write_text(out.path() / "ablation.txt", t.to_text());
  const nlohmann::json j{{"seed", rc.seed}, {"rows", t.to_json()}};
  write_text(out.path() / "ablation.json", j.dump(2) + "\n");
  out.commit();
  std::cout << t.to_text();
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal audio-visual spiking network toolkit"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "JSON config file");
    sub->add_option("--seed", f.seed, "random seed (overrides the config)");
    sub->add_option("--out", f.out, "output directory");
    sub->add_flag("-v,--verbose", f.verbose, "debug logging");
  };
  auto model_flags = [&](CLI::App* sub) {
    sub->add_option("--fusion-mode", f.fusion_mode, "hi_avsnn, concat, audio_only or visual_only");
    sub->add_option("--cue-positions", f.cue_positions, "comma list from {1,2,3,4}");
  };

  auto* synth = app.add_subcommand("synth-data", "generate the synthetic audio-visual dataset");
  common(synth);
  synth->add_option("--snr", f.snr, "target-to-interferer ratio in dB, or 'clean'");

  auto* train = app.add_subcommand("train", "pretrain and finetune a network");
  common(train);
  model_flags(train);
  train->add_option("--data", f.data, "dataset directory (train/ and test/ manifests)")->required();

  auto* eval = app.add_subcommand("eval", "test accuracy of a checkpoint");
  common(eval);
  eval->add_option("--ckpt", f.ckpt, "checkpoint file")->required();
  eval->add_option("--data", f.data, "dataset directory")->required();

  auto* energy = app.add_subcommand("energy", "operation counts and energy of one forward pass");
  common(energy);
  energy->add_option("--ckpt", f.ckpt, "checkpoint file")->required();
  energy->add_option("--data", f.data, "dataset directory")->required();
  energy->add_option("--sample", f.sample, "test sample index");

  auto* causal = app.add_subcommand("causality", "check that outputs never depend on future inputs");
  common(causal);
  model_flags(causal);
  causal->add_option("--ckpt", f.ckpt, "checkpoint file (default: fresh network from --config)");
  causal->add_option("--data", f.data, "dataset directory (default: synthetic samples)");
  causal->add_option("--trials", f.trials, "random perturbations per timestep");
  causal->add_option("--upto-t", f.upto_t, "probe a single timestep");
  causal->add_option("--sample", f.sample, "sample index");
  causal->add_option("--sabotage", f.sabotage, "'mask' (all-ones attention mask) or 'leak' (voxelizer leaks one bin)");

  auto* curve = app.add_subcommand("curve", "recognition accuracy over time");
  common(curve);
  curve->add_option("--ckpt", f.ckpt, "checkpoint file")->required();
  curve->add_option("--data", f.data, "dataset directory")->required();
  curve->add_option("--upto-t", f.upto_t, "also report the accuracy at this timestep");
  curve->add_flag("--cross-check", f.cross_check, "recompute the curve from truncated inputs");

  auto* ablate = app.add_subcommand("ablate", "compare cue positions");
  common(ablate);
  ablate->add_option("--data", f.data, "dataset directory")->required();
  ablate->add_option("--cue-sets", f.cue_sets, "semicolon-separated position sets");

  CLI11_PARSE(app, argc, argv);
  auto logger = spdlog::stderr_color_mt("cuesnn");
  spdlog::set_default_logger(logger);
  spdlog::set_level(f.verbose ? spdlog::level::debug : spdlog::level::info);

  try {
    if (*synth) return cmd_synth_data(f);
    if (*train) return cmd_train(f);
    if (*eval) return cmd_eval(f);
    if (*energy) return cmd_energy(f);
    if (*causal) return cmd_causality(f);
    if (*curve) return cmd_curve(f);
    if (*ablate) return cmd_ablate(f);
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", error_kind(e)}, {"message", e.what()}}.dump() << "\n";
    return kError;
  }
  return kError;
}
