// SPDX-License-Identifier: Apache-2.0
//
// Differentiable operations over Tensor<T>. Every function here records a
// gradient node when grad mode is on and an input requires a gradient.
// Instantiated for float and double.
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "smt/tensor.hpp"

namespace smt {

using Index = std::vector<std::int64_t>;

// ---- elementwise (numpy-style broadcasting) ----
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& x, T s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T s);
template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> sqrt(const Tensor<T>& x);
// Exact-erf GELU: 0.5 x (1 + erf(x / sqrt 2)).
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.01));

// ---- reductions ----
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x, int axis, bool keepdim = false);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x, int axis, bool keepdim = false);

// ---- layout ----
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm);
// Swaps two axes (defaults to the last two).
template <typename T> Tensor<T> transpose(const Tensor<T>& x, int a = -2, int b = -1);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t length);

// out.flat[i] = index[i] < 0 ? 0 : x.flat[index[i]]
template <typename T> Tensor<T> gather(const Tensor<T>& x, const Index& index, Shape out_shape);
// out.flat[index[i]] += x.flat[i] for index[i] >= 0; adjoint of gather.
template <typename T> Tensor<T> scatter(const Tensor<T>& x, const Index& index, Shape out_shape);
// Row variants over the leading axis: out[r] = index[r] < 0 ? 0 : x[index[r]].
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, const Index& index);
template <typename T> Tensor<T> scatter_rows(const Tensor<T>& x, const Index& index, std::int64_t rows);

// ---- linear algebra / normalization ----
// a: [..., i, k]; b: [k, j] (shared) or [..., k, j] with identical batch dims.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// Max-subtracted softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, int axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, int axis);
inline constexpr double kLayerNormEps = 1e-5;
// Normalizes over the last axis (population variance), then gamma * x + beta.
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta);
// Layer norm without affine parameters.
template <typename T> Tensor<T> layer_norm(const Tensor<T>& x);
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x, int axis, T eps = T(1e-6));
// x: [C, D, H, W]; per-channel normalization over the spatial extent, no affine.
template <typename T> Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5));

// ---- volumetric ----
struct Conv3dOptions {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};
// Cross-correlation. x: [Cin, D, H, W]; w: [Cout, Cin, k, k, k]; b: [Cout] or undefined.
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Conv3dOptions opt = {});
// Adjoint of conv3d w.r.t. its input. x: [Cin, D, H, W]; w: [Cin, Cout, k, k, k].
template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                           Conv3dOptions opt = {2, 0});
// x: [C, D, H, W] resampled to out_dims. Output voxel i reads source coordinate
// i * src_step[axis], clamped to the valid range, trilinearly interpolated.
template <typename T>
Tensor<T> trilinear_resize(const Tensor<T>& x, std::array<std::int64_t, 3> out_dims,
                           std::array<double, 3> src_step);

Shape broadcast_shapes(const Shape& a, const Shape& b);
std::int64_t conv_output_size(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad);

}  // namespace smt
