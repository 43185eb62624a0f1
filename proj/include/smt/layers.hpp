// SPDX-License-Identifier: Apache-2.0
//
// Small parameter containers shared by the encoder, Soft MoE, and decoder.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "smt/ops.hpp"

namespace smt {

template <typename T>
using ParamVisitor = std::function<void(const std::string& name, Tensor<T>& param)>;

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out] or undefined

  static Linear init(std::int64_t in, std::int64_t out, bool with_bias, std::mt19937_64& rng, double stddev = 0.02) {
    Linear l;
    l.weight = Tensor<T>::randn({in, out}, rng, static_cast<T>(stddev), true);
    if (with_bias) l.bias = Tensor<T>::zeros({out}, true);
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    v(join_name(prefix, "weight"), weight);
    if (bias.defined()) v(join_name(prefix, "bias"), bias);
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma, beta;

  static LayerNormParams init(std::int64_t width) {
    return {Tensor<T>::ones({width}, true), Tensor<T>::zeros({width}, true)};
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    v(join_name(prefix, "gamma"), gamma);
    v(join_name(prefix, "beta"), beta);
  }
};

// Position-wise feed-forward network: gelu(x W1 + b1) W2 + b2.
template <typename T>
struct FFNParams {
  Tensor<T> w1, b1, w2, b2;  // [d, h], [h], [h, d], [d]

  static FFNParams init(std::int64_t d, std::int64_t h, std::mt19937_64& rng, double stddev = 0.02) {
    FFNParams f;
    f.w1 = Tensor<T>::randn({d, h}, rng, static_cast<T>(stddev), true);
    f.b1 = Tensor<T>::zeros({h}, true);
    f.w2 = Tensor<T>::randn({h, d}, rng, static_cast<T>(stddev), true);
    f.b2 = Tensor<T>::zeros({d}, true);
    return f;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return add(matmul(gelu(add(matmul(x, w1), b1)), w2), b2);
  }

  std::int64_t hidden() const { return w1.dim(1); }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    v(join_name(prefix, "w1"), w1);
    v(join_name(prefix, "b1"), b1);
    v(join_name(prefix, "w2"), w2);
    v(join_name(prefix, "b2"), b2);
  }
};

// Cubic convolution kernel [out, in, k, k, k] with optional bias.
template <typename T>
struct ConvParams {
  Tensor<T> weight;
  Tensor<T> bias;

  // PyTorch default: kaiming-uniform with a = sqrt(5), i.e. U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static ConvParams init(std::int64_t out, std::int64_t in, std::int64_t k, bool with_bias, std::mt19937_64& rng) {
    ConvParams c;
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * k * k * k));
    c.weight = Tensor<T>::uniform({out, in, k, k, k}, rng, static_cast<T>(-bound), static_cast<T>(bound), true);
    if (with_bias) c.bias = Tensor<T>::uniform({out}, rng, static_cast<T>(-bound), static_cast<T>(bound), true);
    return c;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    v(join_name(prefix, "weight"), weight);
    if (bias.defined()) v(join_name(prefix, "bias"), bias);
  }
};

}  // namespace smt
