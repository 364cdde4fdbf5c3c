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

#include "cuesnn/tensor.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "cuesnn/errors.hpp"

namespace cuesnn {

namespace {
thread_local GradTape* g_active_tape = nullptr;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) { return fmt::format("[{}]", fmt::join(shape, ", ")); }

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<detail::TensorImpl>()) {
  if (values.size() != shape_numel(shape)) {
    throw DimensionError(fmt::format("tensor of shape {} needs {} values, got {}", shape_str(shape),
                                     shape_numel(shape), values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  return t;
}

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw StateError("use of an undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) {
    throw DimensionError(fmt::format("axis {} out of range for shape {}", axis, shape_str(s)));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return impl().data.size(); }

std::span<double> Tensor::values() { return impl().data; }
std::span<const double> Tensor::values() const { return impl().data; }

double Tensor::item() const {
  if (numel() != 1) throw DimensionError(fmt::format("item() on tensor of shape {}", shape_str(shape())));
  return impl().data[0];
}

bool Tensor::requires_grad() const { return impl().requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  impl().requires_grad = flag;
  return *this;
}

bool Tensor::is_leaf() const { return impl().is_leaf; }

bool Tensor::has_grad() const { return !impl().grad.empty(); }

std::span<const double> Tensor::grad() const { return impl().grad; }

std::span<double> Tensor::grad_mut() const {
  auto& i = impl();
  if (i.grad.empty()) i.grad.assign(i.data.size(), 0.0);
  return i.grad;
}

void Tensor::zero_grad() const {
  auto& g = impl().grad;
  std::fill(g.begin(), g.end(), 0.0);
}

void Tensor::release_grad() const {
  auto& g = impl().grad;
  g.clear();
  g.shrink_to_fit();
}

Tensor Tensor::clone() const {
  auto copy = std::make_shared<detail::TensorImpl>(impl());
  return Tensor(std::move(copy));
}

Tensor Tensor::detach() const {
  Tensor t(shape(), impl().data);
  return t;
}

Tensor make_result(Shape shape, bool tracked) {
  Tensor t(std::move(shape));
  if (tracked) {
    t.impl_->requires_grad = true;
    t.impl_->is_leaf = false;
  }
  return t;
}

GradTape::Recording::Recording(GradTape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

GradTape::Recording::~Recording() { g_active_tape = previous_; }

GradTape* GradTape::active() noexcept { return g_active_tape; }

void GradTape::push(Tensor output, BackwardFn backward) {
  if (stale_) {
    // A fresh forward after a completed backward starts a new graph.
    nodes_.clear();
    stale_ = false;
  }
  nodes_.push_back(Node{std::move(output), std::move(backward)});
}

void GradTape::backward(const Tensor& loss) {
  if (stale_) throw StateError("backward() called twice without a new forward pass");
  if (nodes_.empty()) throw StateError("backward() on an empty tape");
  if (loss.numel() != 1) {
    throw DimensionError(fmt::format("backward() needs a scalar loss, got shape {}", shape_str(loss.shape())));
  }
  if (!loss.requires_grad()) throw StateError("loss is not connected to any recorded operation");

  Tensor root = loss;
  root.grad_mut()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
  for (auto& node : nodes_) node.output.release_grad();
  nodes_.clear();
  stale_ = true;
}

void GradTape::clear() {
  nodes_.clear();
  stale_ = false;
}

bool should_track(std::initializer_list<const Tensor*> operands) {
  if (g_active_tape == nullptr) return false;
  return std::any_of(operands.begin(), operands.end(),
                     [](const Tensor* t) { return t != nullptr && t->defined() && t->requires_grad(); });
}

}  // namespace cuesnn
