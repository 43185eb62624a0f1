// SPDX-License-Identifier: Apache-2.0
// Internal helpers shared by the op implementations.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "smt/ops.hpp"

namespace smt::detail {

template <typename T>
using BackwardFn = std::function<void(const TensorImpl<T>& out)>;

template <typename T>
bool needs_grad(const std::vector<Tensor<T>>& inputs) {
  if (!grad_enabled()) return false;
  for (const auto& t : inputs) {
    if (t.defined() && t.requires_grad()) return true;
  }
  return false;
}

// Wraps computed values into an output tensor and, when any input requires
// a gradient, attaches the backward closure. `make_backward` is only
// invoked in that case so forward-only calls skip capturing saved state.
template <typename T, typename MakeBackward>
Tensor<T> make_output(Shape shape, std::vector<T> values, const std::vector<Tensor<T>>& inputs,
                      const char* op, MakeBackward&& make_backward) {
  Tensor<T> out(std::move(shape), std::move(values));
  if (!needs_grad(inputs)) return out;
  auto node = std::make_shared<GradNode<T>>();
  node->op = op;
  for (const auto& t : inputs) {
    if (t.defined()) node->inputs.push_back(t.impl());
  }
  node->backward = make_backward();
  out.impl()->grad_fn = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

inline int normalize_axis(int axis, std::size_t rank, const Shape& shape) {
  const int n = static_cast<int>(rank);
  const int a = axis < 0 ? axis + n : axis;
  if (a < 0 || a >= n) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " + shape_str(shape));
  }
  return a;
}

// Splits `shape` around `axis` into (outer, n, inner) extents.
struct AxisSplit {
  std::int64_t outer = 1, n = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, int axis) {
  AxisSplit s;
  for (int i = 0; i < axis; ++i) s.outer *= shape[static_cast<std::size_t>(i)];
  s.n = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename T>
std::vector<T>* grad_of(const std::shared_ptr<TensorImpl<T>>& impl) {
  return impl->requires_grad ? &impl->ensure_grad() : nullptr;
}

}  // namespace smt::detail

#define SMT_INSTANTIATE_FLOAT_TYPES(MACRO) \
  MACRO(float)                             \
  MACRO(double)
