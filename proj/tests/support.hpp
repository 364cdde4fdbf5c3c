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

// Helpers shared by the unit and acceptance tests.

#ifndef CUESNN_TESTS_SUPPORT_HPP_
#define CUESNN_TESTS_SUPPORT_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cuesnn/ops.hpp"
#include "cuesnn/tensor.hpp"

namespace cuesnn::testing {

inline std::vector<double> uniform_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline std::vector<double> binary_values(std::size_t n, std::mt19937_64& rng, double p = 0.5) {
  std::bernoulli_distribution d(p);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng) ? 1.0 : 0.0;
  return v;
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-8});
  return std::abs(a - b) / scale;
}

// Central difference of f with respect to every element of t, perturbing t
// in place and restoring it afterwards.
inline std::vector<double> numeric_gradient(Tensor t, const std::function<double()>& f, double h = 1e-4) {
  auto v = t.values();
  std::vector<double> g(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + h;
    const double up = f();
    v[i] = orig - h;
    const double down = f();
    v[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Gradient of the scalar produced by f with respect to each of the inputs,
// via the tape.
inline std::vector<std::vector<double>> tape_gradients(const std::vector<Tensor>& inputs,
                                                       const std::function<Tensor()>& f) {
  for (const auto& t : inputs) t.zero_grad();
  GradTape tape;
  Tensor loss;
  {
    auto rec = tape.record();
    loss = f();
  }
  tape.backward(loss);
  std::vector<std::vector<double>> out;
  for (const auto& t : inputs) {
    const auto g = t.grad();
    out.emplace_back(g.begin(), g.end());
    if (out.back().empty()) out.back().assign(t.numel(), 0.0);
  }
  return out;
}

// Weighted sum with fixed random weights, so every output element gets a
// distinct, nonzero upstream gradient.
inline Tensor probe_loss(const Tensor& y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  Tensor w(y.shape(), uniform_values(y.numel(), rng));
  return sum(mul(y, w));
}

}  // namespace cuesnn::testing

#endif  // CUESNN_TESTS_SUPPORT_HPP_
