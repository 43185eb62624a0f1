// SPDX-License-Identifier: Apache-2.0
// Shared helpers for the unit suites.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "smt/tensor.hpp"

namespace smt::test {

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return a.size() == b.size() ? m : INFINITY;
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  double m = 0;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return a.size() == b.size() ? m : INFINITY;
}

inline Tensor<double> rand64(Shape s, std::mt19937_64& rng, double sd = 1.0, bool rg = false) {
  return Tensor<double>::randn(std::move(s), rng, sd, rg);
}

}  // namespace smt::test

#include "../oracles/soft_moe_oracle.hpp"
#include "smt/layers.hpp"

namespace smt::test {

inline oracle::Mat to_mat(const Tensor<double>& t) {
  const auto r = t.dim(0), c = t.dim(1);
  oracle::Mat m(static_cast<std::size_t>(r), std::vector<double>(static_cast<std::size_t>(c)));
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) m[i][j] = t.data()[i * c + j];
  return m;
}

inline oracle::Expert to_expert(const FFNParams<double>& f) {
  return {to_mat(f.w1), std::vector<double>(f.b1.data().begin(), f.b1.data().end()), to_mat(f.w2),
          std::vector<double>(f.b2.data().begin(), f.b2.data().end())};
}

inline double max_abs_diff(const Tensor<double>& t, const oracle::Mat& m) {
  const auto c = t.dim(1);
  double worst = 0;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j)
      worst = std::max(worst, std::abs(t.data()[i * c + j] - m[i][j]));
  return worst;
}

}  // namespace smt::test
