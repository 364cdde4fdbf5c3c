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

#include "cuesnn/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <fstream>
#include <map>

#include <fmt/format.h>

#include "cuesnn/errors.hpp"

namespace cuesnn {

static_assert(std::endian::native == std::endian::little, "checkpoints are little-endian");

namespace {

constexpr std::array<char, 8> kMagic{'C', 'U', 'E', 'S', 'N', 'N', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  template <typename T>
  void put(T v) {
    os_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void put_string(const std::string& s, bool wide) {
    if (wide) put<std::uint64_t>(s.size());
    else put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    os_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void put_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors) {
    put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      put_string(name, false);
      put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d : t.shape()) put<std::uint64_t>(d);
      const auto v = t.values();
      os_.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, const std::filesystem::path& path) : is_(is), path_(path) {}
  template <typename T>
  T get() {
    T v{};
    if (!is_.read(reinterpret_cast<char*>(&v), sizeof(T))) fail("truncated file");
    return v;
  }
  std::string get_string(bool wide) {
    const std::uint64_t n = wide ? get<std::uint64_t>() : get<std::uint32_t>();
    if (n > (1ULL << 30)) fail("implausible string length");
    std::string s(n, '\0');
    if (!is_.read(s.data(), static_cast<std::streamsize>(n))) fail("truncated file");
    return s;
  }
  std::map<std::string, Tensor> get_tensors() {
    std::map<std::string, Tensor> out;
    const auto count = get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
      std::string name = get_string(false);
      const auto rank = get<std::uint32_t>();
      if (rank > 8) fail(fmt::format("tensor '{}' has rank {}", name, rank));
      Shape shape(rank);
      for (auto& d : shape) d = get<std::uint64_t>();
      const std::size_t n = shape_numel(shape);
      if (n > (1ULL << 32)) fail(fmt::format("tensor '{}' is implausibly large", name));
      std::vector<double> data(n);
      if (!is_.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)))) {
        fail("truncated file");
      }
      out.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return out;
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw IoError(fmt::format("checkpoint {}: {}", path_.string(), what));
  }

 private:
  std::istream& is_;
  const std::filesystem::path& path_;
};

NamedTensors prefixed(const NamedTensors& tensors, const std::string& prefix) {
  NamedTensors out;
  out.reserve(tensors.size());
  for (const auto& [name, t] : tensors) out.emplace_back(prefix + name, t);
  return out;
}

struct RawCheckpoint {
  std::uint64_t fingerprint = 0;
  nlohmann::json config;
  std::map<std::string, Tensor> tensors;
  std::optional<nlohmann::json> state;
  std::map<std::string, Tensor> state_tensors;
};

RawCheckpoint read_raw(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(fmt::format("cannot open checkpoint {}", path.string()));
  Reader r(is, path);
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic) r.fail("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) r.fail(fmt::format("unsupported version {}", version));
  RawCheckpoint raw;
  raw.fingerprint = r.get<std::uint64_t>();
  try {
    raw.config = nlohmann::json::parse(r.get_string(true));
  } catch (const nlohmann::json::exception& e) {
    r.fail(fmt::format("corrupt config: {}", e.what()));
  }
  raw.tensors = r.get_tensors();
  if (r.get<std::uint8_t>() != 0) {
    try {
      raw.state = nlohmann::json::parse(r.get_string(true));
    } catch (const nlohmann::json::exception& e) {
      r.fail(fmt::format("corrupt training state: {}", e.what()));
    }
    raw.state_tensors = r.get_tensors();
  }
  return raw;
}

void assign(const std::string& name, Tensor dst, const std::map<std::string, Tensor>& src,
            const std::filesystem::path& path) {
  auto it = src.find(name);
  if (it == src.end()) throw IoError(fmt::format("checkpoint {}: missing tensor '{}'", path.string(), name));
  if (it->second.shape() != dst.shape()) {
    throw IoError(fmt::format("checkpoint {}: tensor '{}' has shape {} but the model expects {}", path.string(), name,
                              shape_str(it->second.shape()), shape_str(dst.shape())));
  }
  const auto from = it->second.values();
  std::copy(from.begin(), from.end(), dst.values().begin());
}

void apply(Network& net, const RawCheckpoint& raw, TrainState* state, const std::filesystem::path& path) {
  for (const auto& [name, t] : net.parameters()) assign("param/" + name, t, raw.tensors, path);
  for (const auto& [name, t] : net.buffers()) assign("buffer/" + name, t, raw.tensors, path);
  if (!state) return;
  if (!raw.state) throw IoError(fmt::format("checkpoint {}: no training state stored", path.string()));
  const auto& js = *raw.state;
  state->phase = js.at("phase").get<std::string>();
  state->epoch = js.at("epoch").get<std::size_t>();
  state->adam_step = js.at("adam_step").get<std::uint64_t>();
  state->rng_state = js.at("rng_state").get<std::string>();
  state->adam_m.clear();
  state->adam_v.clear();
  for (const auto& [name, t] : raw.state_tensors) {
    if (name.rfind("adam.m/", 0) == 0) state->adam_m.emplace_back(name.substr(7), t);
    else if (name.rfind("adam.v/", 0) == 0) state->adam_v.emplace_back(name.substr(7), t);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Network& net, const TrainState* state) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(fmt::format("cannot open {} for writing", tmp.string()));
    Writer w(os);
    os.write(kMagic.data(), kMagic.size());
    w.put<std::uint32_t>(kVersion);
    w.put<std::uint64_t>(net.config().fingerprint());
    w.put_string(net.config().to_json().dump(), true);
    NamedTensors all = prefixed(net.parameters(), "param/");
    for (auto& b : prefixed(net.buffers(), "buffer/")) all.push_back(std::move(b));
    w.put_tensors(all);
    w.put<std::uint8_t>(state ? 1 : 0);
    if (state) {
      const nlohmann::json js{{"phase", state->phase},
                              {"epoch", state->epoch},
                              {"adam_step", state->adam_step},
                              {"rng_state", state->rng_state}};
      w.put_string(js.dump(), true);
      NamedTensors moments = prefixed(state->adam_m, "adam.m/");
      for (auto& v : prefixed(state->adam_v, "adam.v/")) moments.push_back(std::move(v));
      w.put_tensors(moments);
    }
    if (!os) throw IoError(fmt::format("write to {} failed", tmp.string()));
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  RawCheckpoint raw = read_raw(path);
  Checkpoint ck;
  ck.config = NetworkConfig::from_json(raw.config);
  if (ck.config.fingerprint() != raw.fingerprint) {
    throw IoError(fmt::format("checkpoint {}: config fingerprint mismatch (stored {:016x}, computed {:016x})", path.string(),
                              raw.fingerprint, ck.config.fingerprint()));
  }
  ck.network = std::make_unique<Network>(ck.config, 0);
  if (raw.state) {
    ck.state.emplace();
    apply(*ck.network, raw, &*ck.state, path);
  } else {
    apply(*ck.network, raw, nullptr, path);
  }
  return ck;
}

void restore_checkpoint(Network& net, const std::filesystem::path& path, TrainState* state) {
  RawCheckpoint raw = read_raw(path);
  if (raw.fingerprint != net.config().fingerprint()) {
    throw ConfigError(fmt::format("checkpoint {} was written for a different network config (fingerprint {:016x}, model {:016x})",
                                  path.string(), raw.fingerprint, net.config().fingerprint()));
  }
  apply(net, raw, state, path);
}

std::vector<std::string> copy_matching_tensors(Network& dst, const Network& src) {
  std::map<std::string, Tensor> from;
  for (const auto& [name, t] : src.parameters()) from.emplace(name, t);
  for (const auto& [name, t] : src.buffers()) from.emplace(name, t);
  std::vector<std::string> copied;
  auto visit = [&](const NamedTensors& targets) {
    for (const auto& [name, t] : targets) {
      auto it = from.find(name);
      if (it == from.end() || it->second.shape() != t.shape()) continue;
      const auto v = it->second.values();
      Tensor target = t;  // shares storage
      std::copy(v.begin(), v.end(), target.values().begin());
      copied.push_back(name);
    }
  };
  visit(dst.parameters());
  visit(dst.buffers());
  return copied;
}

}  // namespace cuesnn
