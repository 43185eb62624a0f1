// SPDX-License-Identifier: Apache-2.0
#include "smt/soft_moe.hpp"

#include <cmath>
#include <string>

#include "../tensor/graph.hpp"

namespace smt {

SoftMoEConfig SoftMoEConfig::for_stage(std::int64_t tokens, std::int64_t hidden, std::int64_t experts) {
  if (experts < 1) throw ConfigError("Soft MoE needs at least one expert");
  if (tokens % experts != 0) {
    throw ConfigError("expert count " + std::to_string(experts) + " does not divide token count " +
                      std::to_string(tokens));
  }
  SoftMoEConfig cfg;
  cfg.tokens = tokens;
  cfg.hidden = hidden;
  cfg.experts = experts;
  cfg.slots_per_expert = tokens / experts;
  cfg.validate();
  return cfg;
}

void SoftMoEConfig::validate() const {
  if (experts < 1 || slots_per_expert < 1) {
    throw ConfigError("Soft MoE needs n >= 1 and s >= 1 (n=" + std::to_string(experts) +
                      ", s=" + std::to_string(slots_per_expert) + ")");
  }
  if (hidden < 1) throw ConfigError("Soft MoE hidden size must be positive");
  if (mlp_ratio < 1) throw ConfigError("Soft MoE mlp ratio must be positive");
}

template <typename T>
SoftMoEParams<T> SoftMoEParams<T>::init(const SoftMoEConfig& cfg, std::mt19937_64& rng, bool normalize_logits) {
  cfg.validate();
  SoftMoEParams p;
  const double phi_std = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  p.phi = Tensor<T>::randn({cfg.hidden, cfg.total_slots()}, rng, static_cast<T>(phi_std), true);
  for (std::int64_t k = 0; k < cfg.experts; ++k) {
    p.experts.push_back(FFNParams<T>::init(cfg.hidden, cfg.expert_hidden(), rng));
  }
  p.normalize_logits = normalize_logits;
  if (normalize_logits) p.logit_scale = Tensor<T>::ones({1}, true);
  return p;
}

template <typename T>
void SoftMoEParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  v(join_name(prefix, "phi"), phi);
  if (logit_scale.defined()) v(join_name(prefix, "logit_scale"), logit_scale);
  for (std::size_t k = 0; k < experts.size(); ++k) {
    experts[k].visit(join_name(prefix, "experts." + std::to_string(k)), v);
  }
}

namespace {

template <typename T>
void check_router_shapes(const Tensor<T>& x, const Tensor<T>& phi) {
  if (x.ndim() != 2 || phi.ndim() != 2 || x.dim(1) != phi.dim(0)) {
    throw DimensionError("Soft MoE router shape mismatch: x " + shape_str(x.shape()) + ", phi " +
                         shape_str(phi.shape()));
  }
}

template <typename T>
Tensor<T> router_logits(const Tensor<T>& x, const SoftMoEParams<T>& params) {
  check_router_shapes(x, params.phi);
  if (!params.normalize_logits) return matmul(x, params.phi);
  auto logits = matmul(l2_normalize(x, 1), l2_normalize(params.phi, 0));
  return mul(logits, params.logit_scale);
}

template <typename T>
Tensor<T> forward_single(const Tensor<T>& x, const SoftMoEParams<T>& params, SoftMoETrace<T>* trace,
                         const SoftMoEOptions& options) {
  auto logits = router_logits(x, params);
  if (options.logit_offset != 0.0) logits = add_scalar(logits, static_cast<T>(options.logit_offset));
  auto dispatch = softmax(logits, 0);
  auto combine = softmax(logits, 1);
  auto slots = slot_inputs(dispatch, x);
  auto y = expert_apply(slots, params.experts);
  auto out = matmul(combine, y);
  if (trace) *trace = {logits, dispatch, slots, y, combine};
  return out;
}

}  // namespace

template <typename T>
Tensor<T> dispatch_weights(const Tensor<T>& x, const Tensor<T>& phi) {
  check_router_shapes(x, phi);
  return softmax(matmul(x, phi), 0);
}

template <typename T>
Tensor<T> combine_weights(const Tensor<T>& x, const Tensor<T>& phi) {
  check_router_shapes(x, phi);
  return softmax(matmul(x, phi), 1);
}

template <typename T>
Tensor<T> slot_inputs(const Tensor<T>& dispatch, const Tensor<T>& x) {
  if (dispatch.ndim() != 2 || x.ndim() != 2 || dispatch.dim(0) != x.dim(0)) {
    throw DimensionError("slot_inputs shape mismatch: D " + shape_str(dispatch.shape()) + ", x " +
                         shape_str(x.shape()));
  }
  return matmul(transpose(dispatch), x);
}

template <typename T>
Tensor<T> expert_apply(const Tensor<T>& slots, const std::vector<FFNParams<T>>& experts) {
  const auto n = static_cast<std::int64_t>(experts.size());
  if (n == 0) throw ConfigError("expert_apply needs at least one expert");
  if (slots.ndim() != 2 || slots.dim(0) % n != 0) {
    throw ConfigError("slot count of " + shape_str(slots.shape()) + " is not a multiple of the " +
                      std::to_string(n) + " experts");
  }
  const auto s = slots.dim(0) / n;
  if (n == 1) return experts.front()(slots);
  std::vector<Tensor<T>> outputs;
  outputs.reserve(experts.size());
  for (std::int64_t k = 0; k < n; ++k) outputs.push_back(experts[k](slice(slots, 0, k * s, s)));
  return concat(outputs, 0);
}

template <typename T>
Tensor<T> soft_moe_forward(const Tensor<T>& x, const SoftMoEParams<T>& params, SoftMoETrace<T>* trace,
                           const SoftMoEOptions& options) {
  if (params.experts.empty() || params.total_slots() % static_cast<std::int64_t>(params.experts.size()) != 0) {
    throw ConfigError("Soft MoE parameters are inconsistent: phi " + shape_str(params.phi.shape()) + " with " +
                      std::to_string(params.experts.size()) + " experts");
  }
  if (x.ndim() == 2) return forward_single(x, params, trace, options);
  if (x.ndim() != 3) throw DimensionError("Soft MoE expects [m, d] or [B, m, d], got " + shape_str(x.shape()));
  const auto batch = x.dim(0), m = x.dim(1), d = x.dim(2);
  std::vector<Tensor<T>> outs;
  for (std::int64_t b = 0; b < batch; ++b) {
    auto sample = reshape(slice(x, 0, b, 1), {m, d});
    outs.push_back(reshape(forward_single(sample, params, b == 0 ? trace : nullptr, options), {1, m, d}));
  }
  return concat(outs, 0);
}

std::int64_t expert_param_count(std::int64_t hidden, std::int64_t expert_hidden) {
  return hidden * expert_hidden + expert_hidden + expert_hidden * hidden + hidden;
}

std::int64_t soft_moe_param_count(const SoftMoEConfig& cfg) {
  cfg.validate();
  return cfg.hidden * cfg.total_slots() + cfg.experts * expert_param_count(cfg.hidden, cfg.expert_hidden());
}

#define SMT_INST(T)                                                                                       \
  template struct SoftMoEParams<T>;                                                                       \
  template Tensor<T> dispatch_weights(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> combine_weights(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> slot_inputs(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> expert_apply(const Tensor<T>&, const std::vector<FFNParams<T>>&);                    \
  template Tensor<T> soft_moe_forward(const Tensor<T>&, const SoftMoEParams<T>&, SoftMoETrace<T>*,        \
                                      const SoftMoEOptions&);
SMT_INSTANTIATE_FLOAT_TYPES(SMT_INST)
#undef SMT_INST

}  // namespace smt
