// SPDX-License-Identifier: Apache-2.0
#include "smt/tensor.hpp"

#include <algorithm>
#include <cstdlib>
#include <new>
#include <sstream>
#include <unordered_set>

namespace smt {

namespace {

thread_local bool g_grad_enabled = true;

bool env_deterministic() {
  const char* v = std::getenv("SMT_DETERMINISTIC");
  return v != nullptr && std::string(v) == "1";
}

bool g_deterministic = env_deterministic();

}  // namespace

const char* dtype_name(DType d) { return d == DType::f32 ? "f32" : "f64"; }

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto v : s) {
    if (v < 0) throw DimensionError("negative dimension in shape " + shape_str(s));
    n *= v;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool deterministic_mode() { return g_deterministic; }
void set_deterministic_mode(bool on) { g_deterministic = on; }

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill, bool requires_grad) {
  impl_ = std::make_shared<TensorImpl<T>>();
  const auto n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<std::size_t>(n), fill);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
  const auto n = shape_numel(shape);
  if (static_cast<std::int64_t>(values.size()) != n) {
    throw DimensionError("data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  impl_ = std::make_shared<TensorImpl<T>>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, std::mt19937_64& rng, T stddev, bool requires_grad) {
  Tensor t(std::move(shape), T(0), requires_grad);
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  for (auto& v : t.impl_->data) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, std::mt19937_64& rng, T lo, T hi, bool requires_grad) {
  Tensor t(std::move(shape), T(0), requires_grad);
  std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
  for (auto& v : t.impl_->data) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
std::int64_t Tensor<T>::dim(int axis) const {
  const int n = static_cast<int>(impl_->shape.size());
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(impl_->shape));
  }
  return impl_->shape[static_cast<std::size_t>(a)];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
}

template <typename T>
T Tensor<T>::item() const {
  if (impl_->data.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(impl_->shape));
  }
  return impl_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::int64_t> index) const {
  if (index.size() != impl_->shape.size()) {
    throw DimensionError("index rank mismatch for shape " + shape_str(impl_->shape));
  }
  std::int64_t flat = 0;
  std::size_t k = 0;
  for (auto i : index) {
    const auto n = impl_->shape[k++];
    if (i < 0 || i >= n) throw DimensionError("index out of range for shape " + shape_str(impl_->shape));
    flat = flat * n + i;
  }
  return impl_->data[static_cast<std::size_t>(flat)];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return from_impl(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return detach();
}

template <typename T>
void Tensor<T>::backward() const {
  if (!impl_) throw ContractError("backward() on undefined tensor");
  if (impl_->data.size() != 1) {
    throw ContractError("backward() requires a scalar loss, got shape " + shape_str(impl_->shape));
  }
  if (!impl_->requires_grad) {
    throw ContractError("backward() on a loss with an empty tape (nothing requires grad)");
  }
  auto tape = GradTape<T>::record(*this);
  impl_->ensure_grad()[0] += T(1);
  tape.replay();
}

template <typename T>
GradTape<T> GradTape<T>::record(const Tensor<T>& root) {
  GradTape tape;
  std::unordered_set<const TensorImpl<T>*> visited;
  // Iterative post-order DFS; each frame tracks the next input to expand.
  std::vector<std::pair<std::shared_ptr<TensorImpl<T>>, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto& fn = node->grad_fn;
    if (fn && next < fn->inputs.size()) {
      auto child = fn->inputs[next++];
      if (child->requires_grad && visited.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
      continue;
    }
    tape.order_.push_back(node.get());
    tape.keep_alive_.push_back(node);
    stack.pop_back();
  }
  return tape;
}

template <typename T>
std::vector<const TensorImpl<T>*> GradTape<T>::replay() const {
  std::vector<const TensorImpl<T>*> visited;
  visited.reserve(order_.size());
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    TensorImpl<T>* node = *it;
    visited.push_back(node);
    if (node->grad_fn && node->grad.size() == node->data.size()) {
      node->grad_fn->backward(*node);
    }
  }
  return visited;
}

template class Tensor<float>;
template class Tensor<double>;
template class GradTape<float>;
template class GradTape<double>;

}  // namespace smt

// Eigen's vectorized reductions peel an unaligned head whose length depends
// on the buffer address, which makes float sums vary between otherwise
// identical runs. Giving every heap block the same (cache-line) alignment
// removes that dependence.
namespace {

constexpr std::size_t kHeapAlign = 64;

void* aligned_or_null(std::size_t n) noexcept {
  const std::size_t rounded = (std::max<std::size_t>(n, 1) + kHeapAlign - 1) / kHeapAlign * kHeapAlign;
  return std::aligned_alloc(kHeapAlign, rounded);
}

void* aligned_or_throw(std::size_t n) {
  for (;;) {
    if (void* p = aligned_or_null(n)) return p;
    auto handler = std::get_new_handler();
    if (!handler) throw std::bad_alloc();
    handler();
  }
}

}  // namespace

void* operator new(std::size_t n) { return aligned_or_throw(n); }
void* operator new[](std::size_t n) { return aligned_or_throw(n); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept { return aligned_or_null(n); }
void* operator new[](std::size_t n, const std::nothrow_t&) noexcept { return aligned_or_null(n); }
void operator delete(void* p) noexcept { std::free(p); }
void operator delete[](void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }
void operator delete[](void* p, std::size_t) noexcept { std::free(p); }
void operator delete(void* p, const std::nothrow_t&) noexcept { std::free(p); }
void operator delete[](void* p, const std::nothrow_t&) noexcept { std::free(p); }
