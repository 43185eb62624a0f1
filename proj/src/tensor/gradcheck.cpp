// SPDX-License-Identifier: Apache-2.0
#include "smt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace smt {

namespace {

double evaluate(const ScalarFn& f) {
  NoGradGuard guard;
  const auto out = f();
  if (out.numel() != 1) throw ContractError("finite_diff_check: function must return a scalar");
  return out.item();
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

}  // namespace

GradCheckReport finite_diff_check(const ScalarFn& f, std::vector<NamedParam> params,
                                  const GradCheckOptions& options) {
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  const double first = evaluate(f);
  const double second = evaluate(f);
  if (first != second) {
    throw ContractError("finite_diff_check: function is not deterministic (" + std::to_string(first) +
                        " vs " + std::to_string(second) + ")");
  }
  {
    const auto loss = f();
    loss.backward();
  }
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    const auto g = p.tensor.grad();
    analytic.emplace_back(g.begin(), g.end());
    analytic.back().resize(static_cast<std::size_t>(p.tensor.numel()), 0.0);
  }

  GradCheckReport report;
  const double eps = options.eps;
  std::mt19937_64 rng(options.seed);
  auto record = [&](double err, const std::string& name, std::int64_t index) {
    ++report.probes;
    if (report.worst_param.empty() || err > report.max_relative_error) {
      report.max_relative_error = std::max(report.max_relative_error, err);
      report.worst_param = name;
      report.worst_index = index;
    }
  };

  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& t = params[k].tensor;
    auto data = t.mutable_data();
    const auto n = static_cast<std::int64_t>(data.size());
    std::vector<std::int64_t> entries(static_cast<std::size_t>(n));
    std::iota(entries.begin(), entries.end(), 0);
    if (options.max_entries_per_param >= 0 && n > options.max_entries_per_param) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(static_cast<std::size_t>(options.max_entries_per_param));
    }
    for (auto i : entries) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = evaluate(f);
      data[i] = saved - eps;
      const double down = evaluate(f);
      data[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      record(relative_error(analytic[k][i], numeric), params[k].name, i);
    }
    if (options.directional && n > 0) {
      std::vector<double> dir(static_cast<std::size_t>(n));
      std::bernoulli_distribution coin(0.5);
      double projected = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        dir[i] = coin(rng) ? 1.0 : -1.0;
        projected += dir[i] * analytic[k][i];
      }
      const std::vector<double> saved(data.begin(), data.end());
      for (std::int64_t i = 0; i < n; ++i) data[i] = saved[i] + eps * dir[i];
      const double up = evaluate(f);
      for (std::int64_t i = 0; i < n; ++i) data[i] = saved[i] - eps * dir[i];
      const double down = evaluate(f);
      std::copy(saved.begin(), saved.end(), data.begin());
      record(relative_error(projected, (up - down) / (2 * eps)), params[k].name, -1);
    }
  }
  return report;
}

double finite_diff_check(const ScalarFn& f, const std::vector<Tensor<double>>& params, double eps) {
  std::vector<NamedParam> named;
  for (std::size_t i = 0; i < params.size(); ++i) named.push_back({"param" + std::to_string(i), params[i]});
  GradCheckOptions opt;
  opt.eps = eps;
  return finite_diff_check(f, std::move(named), opt).max_relative_error;
}

}  // namespace smt
