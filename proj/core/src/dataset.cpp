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

#include "cuesnn/dataset.hpp"

#include <fstream>

#include <fmt/format.h>

#include "cuesnn/errors.hpp"

namespace cuesnn {

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError(fmt::format("cannot open manifest {}", path.string()));
  const auto base = path.parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.event_path = j.at("event_path").get<std::string>();
      e.audio_path = j.at("audio_path").get<std::string>();
      e.label = j.at("label").get<int>();
      if (e.event_path.is_relative()) e.event_path = base / e.event_path;
      if (e.audio_path.is_relative()) e.audio_path = base / e.audio_path;
      if (e.label < 0) throw ConfigError("negative label");
      out.push_back(std::move(e));
    } catch (const std::exception& ex) {
      throw ConfigError(fmt::format("{}:{}: {}", path.string(), lineno, ex.what()));
    }
  }
  if (out.empty()) throw EmptyInputError(fmt::format("manifest {} has no entries", path.string()));
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path);
  if (!os) throw IoError(fmt::format("cannot open {} for writing", path.string()));
  for (const auto& e : entries) {
    os << nlohmann::json{{"event_path", e.event_path.generic_string()},
                         {"audio_path", e.audio_path.generic_string()},
                         {"label", e.label}}
              .dump()
       << '\n';
  }
}

nlohmann::json DataPipeline::to_json() const {
  return {{"time_steps", time_steps},
          {"sensor_crop", sensor_crop},
          {"crop", visual.crop},
          {"output", visual.output},
          {"flip_probability", visual.flip_probability},
          {"augment_audio", augment_audio},
          {"polarity_probability", audio.polarity_probability},
          {"noise_probability", audio.noise_probability},
          {"volume_probability", audio.volume_probability}};
}

DataPipeline DataPipeline::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("data pipeline config must be a JSON object");
  DataPipeline p;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "time_steps") p.time_steps = value.get<std::size_t>();
      else if (key == "sensor_crop") p.sensor_crop = value.get<std::size_t>();
      else if (key == "crop") p.visual.crop = value.get<std::size_t>();
      else if (key == "output") p.visual.output = value.get<std::size_t>();
      else if (key == "flip_probability") p.visual.flip_probability = value.get<double>();
      else if (key == "augment_audio") p.augment_audio = value.get<bool>();
      else if (key == "polarity_probability") p.audio.polarity_probability = value.get<double>();
      else if (key == "noise_probability") p.audio.noise_probability = value.get<double>();
      else if (key == "volume_probability") p.audio.volume_probability = value.get<double>();
      else throw ConfigError(fmt::format("data config: unknown field '{}'", key));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(fmt::format("data config field '{}': {}", key, e.what()));
    }
  }
  if (p.time_steps == 0) throw ConfigError("data.time_steps must be positive");
  if (p.visual.crop > p.sensor_crop) throw ConfigError("data.crop exceeds data.sensor_crop");
  return p;
}

PreparedSample prepare_sample(EventStream events, AudioWave audio, int label, const DataPipeline& pipeline,
                              bool keep_audio) {
  PreparedSample s;
  if (audio.sample_rate != kSampleRate) audio = resample_linear(audio, kSampleRate);
  s.fbank = fbank(audio, pipeline.time_steps, pipeline.fbank).frames;
  s.events = std::move(events);
  if (keep_audio) s.audio = std::move(audio);
  s.label = label;
  return s;
}

EventVoxelGrid sensor_grid(const EventStream& events, const DataPipeline& p) {
  EventVoxelGrid g = voxelize(events, p.time_steps, events.height, events.width, p.voxelize);
  if (g.height() < p.sensor_crop || g.width() < p.sensor_crop) {
    throw DimensionError(fmt::format("{}x{} sensor is smaller than the {} crop", g.height(), g.width(), p.sensor_crop));
  }
  if (g.height() == p.sensor_crop && g.width() == p.sensor_crop) return g;
  return crop_grid(g, (g.height() - p.sensor_crop) / 2, (g.width() - p.sensor_crop) / 2, p.sensor_crop);
}

std::vector<double> visual_input(const PreparedSample& sample, const DataPipeline& p, std::mt19937_64* rng) {
  // Same result as augment_visual(sensor_grid(...)), computed per event
  // instead of per grid cell.
  const EventStream& ev = sample.events;
  if (ev.events.empty()) throw EmptyInputError("visual_input: empty event stream");
  if (ev.height < p.sensor_crop || ev.width < p.sensor_crop) {
    throw DimensionError(fmt::format("{}x{} sensor is smaller than the {} crop", ev.height, ev.width, p.sensor_crop));
  }
  std::mt19937_64 unused(0);
  const CropPlacement place = draw_crop(p.sensor_crop, p.sensor_crop, rng ? *rng : unused, rng != nullptr, p.visual);
  const std::size_t steps = p.time_steps;
  const std::size_t c = p.visual.crop;
  const std::size_t side = p.visual.output;
  const std::size_t factor = c / side;
  const std::size_t oy = (ev.height - p.sensor_crop) / 2 + place.top;
  const std::size_t ox = (ev.width - p.sensor_crop) / 2 + place.left;
  const std::uint64_t t_first = ev.events.front().timestamp_us;
  const std::uint64_t t_last = ev.events.back().timestamp_us;
  std::vector<double> out(steps * side * side * 2);
  for (const Event& e : ev.events) {
    if (e.y < oy || e.x < ox || e.y >= oy + c || e.x >= ox + c) continue;
    std::size_t x = e.x - ox;
    if (place.flip) x = c - 1 - x;
    const std::size_t cell = ((e.y - oy) / factor * side + x / factor) * 2 + e.polarity;
    const std::size_t bin = event_bin(e.timestamp_us, t_first, t_last, steps);
    for (std::size_t k = 0; k <= p.voxelize.leak_future_bins && k <= bin; ++k) out[(bin - k) * side * side * 2 + cell] = 1.0;
  }
  return out;
}

ModelInput make_batch(std::span<const PreparedSample* const> samples, const DataPipeline& p, std::mt19937_64* rng) {
  if (samples.empty()) throw EmptyInputError("make_batch: no samples");
  const std::size_t batch = samples.size();
  const std::size_t steps = p.time_steps;
  const std::size_t side = p.visual.output;
  const std::size_t frame = side * side * 2;
  const std::size_t feat = samples[0]->fbank.dim(1);
  ModelInput in{Tensor(Shape{steps, batch, side, side, 2}), Tensor(Shape{steps, batch, feat})};
  auto vox = in.voxels.values();
  auto fb = in.fbank.values();
  for (std::size_t b = 0; b < batch; ++b) {
    const PreparedSample& s = *samples[b];
    const auto v = visual_input(s, p, rng);
    for (std::size_t t = 0; t < steps; ++t) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(t * frame), frame,
                  vox.begin() + static_cast<std::ptrdiff_t>((t * batch + b) * frame));
    }
    Tensor frames = s.fbank;
    if (rng && p.augment_audio && s.audio) frames = fbank(augment_audio(*s.audio, *rng, p.audio), steps, p.fbank).frames;
    if (frames.dim(0) != steps || frames.dim(1) != feat) {
      throw AlignmentError(fmt::format("sample {} has filterbank {} but the batch expects [{}, {}]", b,
                                       shape_str(frames.shape()), steps, feat));
    }
    const auto f = frames.values();
    for (std::size_t t = 0; t < steps; ++t) {
      std::copy_n(f.begin() + static_cast<std::ptrdiff_t>(t * feat), feat,
                  fb.begin() + static_cast<std::ptrdiff_t>((t * batch + b) * feat));
    }
  }
  return in;
}

ModelInput make_batch(const PreparedSample& sample, const DataPipeline& pipeline) {
  const PreparedSample* one[] = {&sample};
  return make_batch(one, pipeline, nullptr);
}

std::vector<PreparedSample> load_manifest_samples(const std::filesystem::path& manifest, const DataPipeline& pipeline,
                                                  bool keep_audio) {
  std::vector<PreparedSample> out;
  for (const auto& e : read_manifest(manifest)) {
    out.push_back(prepare_sample(read_events(e.event_path), read_wav(e.audio_path), e.label, pipeline, keep_audio));
  }
  return out;
}

std::vector<PreparedSample> synth_prepared(const SynthSpec& spec, std::uint64_t seed, Split split,
                                           const DataPipeline& pipeline, bool keep_audio) {
  std::vector<PreparedSample> out;
  const std::size_t n = split_size(spec, split);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    AvSample s = synth_sample(spec, seed, split, i);
    out.push_back(prepare_sample(std::move(s.events), std::move(s.audio), s.label, pipeline, keep_audio));
  }
  return out;
}

void write_synth_dataset(const std::filesystem::path& dir, const SynthSpec& spec, std::uint64_t seed) {
  spec.validate();
  namespace fs = std::filesystem;
  for (Split split : {Split::kTrain, Split::kTest}) {
    const fs::path sub = dir / (split == Split::kTrain ? "train" : "test");
    fs::create_directories(sub / "events");
    fs::create_directories(sub / "audio");
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < split_size(spec, split); ++i) {
      const AvSample s = synth_sample(spec, seed, split, i);
      const std::string stem = fmt::format("{:06d}", i);
      ManifestEntry e{fs::path("events") / (stem + ".csev"), fs::path("audio") / (stem + ".wav"), s.label};
      write_events_binary(sub / e.event_path, s.events);
      write_wav(sub / e.audio_path, s.audio);
      entries.push_back(std::move(e));
    }
    write_manifest(sub / "manifest.jsonl", entries);
  }
  std::ofstream os(dir / "spec.json");
  if (!os) throw IoError(fmt::format("cannot write {}", (dir / "spec.json").string()));
  os << nlohmann::json{{"seed", seed}, {"spec", spec.to_json()}}.dump(2) << '\n';
}

}  // namespace cuesnn
