// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numbers>

#include "smt/faults.hpp"
#include "smt/train.hpp"
#include "../tensor/graph.hpp"

namespace smt {

template <typename T>
void adamw_step(std::vector<Tensor<T>>& params, AdamWState<T>& state, double lr, const AdamWConfig& cfg) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Tensor<T>::zeros(p.shape()));
      state.v.push_back(Tensor<T>::zeros(p.shape()));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("optimizer state holds " + std::to_string(state.m.size()) + " moments for " +
                         std::to_string(params.size()) + " parameters");
  }
  state.t += 1;
  const bool raw = active_fault() == Fault::adamw_no_bias_correction;
  const double c1 = raw ? 1.0 : 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = raw ? 1.0 : 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (state.m[i].shape() != p.shape() || state.v[i].shape() != p.shape()) {
      throw DimensionError("optimizer moment shape " + shape_str(state.m[i].shape()) + " does not match parameter " +
                           shape_str(p.shape()));
    }
    auto w = p.mutable_data();
    auto m = state.m[i].mutable_data();
    auto v = state.v[i].mutable_data();
    const bool has = p.has_grad();
    const auto g = p.grad();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = has ? static_cast<double>(g[k]) : 0.0;
      double wk = static_cast<double>(w[k]);
      wk -= lr * cfg.weight_decay * wk;
      const double mk = cfg.beta1 * static_cast<double>(m[k]) + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * static_cast<double>(v[k]) + (1.0 - cfg.beta2) * gk * gk;
      wk -= lr * (mk / c1) / (std::sqrt(vk / c2) + cfg.eps);
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      w[k] = static_cast<T>(wk);
    }
  }
}

double warmup_cosine_lr(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double base_lr) {
  if (total_steps < 1) throw ConfigError("schedule needs at least one step");
  if (warmup_steps < 0 || warmup_steps >= total_steps) throw ConfigError("warm-up must be shorter than the schedule");
  if (step <= 0) return warmup_steps > 0 ? 0.0 : base_lr;
  if (step >= total_steps) return 0.0;
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

#define SMT_INST(T) \
  template void adamw_step<T>(std::vector<Tensor<T>>&, AdamWState<T>&, double, const AdamWConfig&);
SMT_INSTANTIATE_FLOAT_TYPES(SMT_INST)
#undef SMT_INST

}  // namespace smt
