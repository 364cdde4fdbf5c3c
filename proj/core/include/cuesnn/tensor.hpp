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

#ifndef CUESNN_TENSOR_HPP_
#define CUESNN_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cuesnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  // Empty until something accumulates into it.
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
};

}  // namespace detail

// Dense row-major tensor of doubles with an optional gradient slot.
//
// Tensor is a shared handle: copies alias the same storage, which is what
// lets the tape refer back to operands during the backward sweep. Use
// clone() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  // Leaf tensor that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<double> values();
  std::span<const double> values() const;
  double item() const;
  double at(std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  // Gradient buffer, zero-initialised on first access. The gradient slot is
  // bookkeeping, not part of the tensor's value, so this is const.
  std::span<double> grad_mut() const;
  void zero_grad() const;
  void release_grad() const;

  Tensor clone() const;
  // Same values, no gradient tracking.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  detail::TensorImpl& impl() const;

  std::shared_ptr<detail::TensorImpl> impl_;

  friend class GradTape;
  friend Tensor make_result(Shape shape, bool tracked);
};

// Output tensor of a primitive. A tracked result is a non-leaf that will
// receive gradients during backward.
Tensor make_result(Shape shape, bool tracked);

// Reverse-mode tape over the time-unrolled graph.
//
// Primitives push one node per call while a Recording is alive on the
// current thread. backward() replays the nodes once in reverse order,
// leaves parameter gradients in place and releases every intermediate
// gradient. The tape is then stale until the next forward records again.
class GradTape {
 public:
  using BackwardFn = std::function<void()>;

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  class Recording {
   public:
    explicit Recording(GradTape& tape);
    ~Recording();
    Recording(const Recording&) = delete;
    Recording& operator=(const Recording&) = delete;

   private:
    GradTape* previous_;
  };

  [[nodiscard]] Recording record() { return Recording(*this); }

  // Tape recording on this thread, or nullptr.
  static GradTape* active() noexcept;

  void push(Tensor output, BackwardFn backward);
  void backward(const Tensor& loss);
  void clear();

  std::size_t size() const noexcept { return nodes_.size(); }
  bool stale() const noexcept { return stale_; }

 private:
  struct Node {
    Tensor output;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool stale_ = false;
};

// True when a tape is recording and at least one operand needs gradients.
bool should_track(std::initializer_list<const Tensor*> operands);

}  // namespace cuesnn

#endif  // CUESNN_TENSOR_HPP_
