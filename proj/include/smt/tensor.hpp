// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a cheap shared handle. Operations in ops.hpp record a GradNode
// on their output whenever gradient mode is on and at least one input
// requires a gradient; backward() replays those nodes in reverse topological
// order. Gradients accumulate additively, so callers zero them between steps.
#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "smt/errors.hpp"

namespace smt {

enum class DType { f32, f64 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

const char* dtype_name(DType d);

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

template <typename T>
struct TensorImpl;

template <typename T>
struct GradNode {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl<T>>> inputs;
  // Reads out.grad and accumulates into the grads of `inputs`.
  std::function<void(const TensorImpl<T>& out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<GradNode<T>> grad_fn;

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

// Gradient recording is on by default; NoGradGuard disables it for a scope.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Deterministic mode pins every reduction to a fixed order and disables
// tile-level parallelism. Initialized from SMT_DETERMINISTIC=1.
bool deterministic_mode();
void set_deterministic_mode(bool on);

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false);
  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), T(0), requires_grad);
  }
  static Tensor ones(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), T(1), requires_grad);
  }
  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{}, v, requires_grad);
  }
  static Tensor randn(Shape shape, std::mt19937_64& rng, T stddev = T(1),
                      bool requires_grad = false);
  static Tensor uniform(Shape shape, std::mt19937_64& rng, T lo, T hi,
                        bool requires_grad = false);
  static Tensor from_impl(std::shared_ptr<TensorImpl<T>> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::int64_t dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
  DType dtype() const { return dtype_of<T>(); }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> mutable_data() { return impl_->data; }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->ensure_grad(); }
  void zero_grad();

  T item() const;
  T at(std::initializer_list<std::int64_t> index) const;

  // Same storage values, no graph history.
  Tensor detach() const;
  // Deep copy of values, no graph history, no gradient.
  Tensor clone() const;
  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(impl_->data.begin(), impl_->data.end());
    return Tensor<U>(impl_->shape, std::move(out));
  }

  // Seeds d(this)/d(this) = 1 and replays the graph. `this` must be scalar.
  void backward() const;

  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Ordered record of the graph reachable from a root, in topological order
// (inputs before outputs). Replaying visits every node once in reverse.
template <typename T>
class GradTape {
 public:
  static GradTape record(const Tensor<T>& root);

  std::size_t size() const { return order_.size(); }
  bool empty() const { return order_.empty(); }
  const std::vector<TensorImpl<T>*>& order() const { return order_; }

  // Runs every recorded adjoint, last node first. Returns the visit order.
  std::vector<const TensorImpl<T>*> replay() const;

 private:
  std::vector<TensorImpl<T>*> order_;
  std::vector<std::shared_ptr<TensorImpl<T>>> keep_alive_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
  loss.backward();
}

}  // namespace smt
