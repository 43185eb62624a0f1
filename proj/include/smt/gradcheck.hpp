// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "smt/tensor.hpp"

namespace smt {

using ScalarFn = std::function<Tensor<double>()>;

struct GradCheckOptions {
  double eps = 1e-4;
  // Per-parameter cap on coordinate checks; < 0 checks every entry.
  std::int64_t max_entries_per_param = -1;
  // Also compare one random-direction derivative per parameter tensor,
  // which exercises every entry at once.
  bool directional = false;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;  // -1 for a directional probe
  std::size_t probes = 0;
};

struct NamedParam {
  std::string name;
  Tensor<double> tensor;
};

// Compares reverse-mode gradients of `f` against central differences.
// Relative error is |analytic - numeric| / max(1, |numeric|).
// Throws ContractError if two evaluations of f disagree.
GradCheckReport finite_diff_check(const ScalarFn& f, std::vector<NamedParam> params,
                                  const GradCheckOptions& options = {});

double finite_diff_check(const ScalarFn& f, const std::vector<Tensor<double>>& params, double eps = 1e-4);

}  // namespace smt
