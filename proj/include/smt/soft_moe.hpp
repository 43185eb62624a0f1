// SPDX-License-Identifier: Apache-2.0
//
// Soft Mixture-of-Experts layer.
//
// Every slot is a convex combination of all input tokens (dispatch weights D,
// a softmax over tokens of the logits X·Φ). Expert k owns slots
// [k·s, (k+1)·s) and applies its own FFN to them. Every output token is a
// convex combination of all slot outputs (combine weights S, a softmax over
// slots of the same logits).
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "smt/layers.hpp"

namespace smt {

struct SoftMoEConfig {
  std::int64_t tokens = 0;            // m
  std::int64_t hidden = 0;            // d
  std::int64_t experts = 1;           // n
  std::int64_t slots_per_expert = 1;  // s
  std::int64_t mlp_ratio = 4;         // expert hidden width h = mlp_ratio · d

  // s = m / n; rejects n that does not divide m.
  static SoftMoEConfig for_stage(std::int64_t tokens, std::int64_t hidden, std::int64_t experts);

  std::int64_t total_slots() const { return experts * slots_per_expert; }
  std::int64_t expert_hidden() const { return mlp_ratio * hidden; }
  void validate() const;
};

template <typename T>
struct SoftMoEParams {
  Tensor<T> phi;  // [d, n·s]
  std::vector<FFNParams<T>> experts;
  // Optional l2-normalized logits with a learnable scale; off by default.
  bool normalize_logits = false;
  Tensor<T> logit_scale;  // [1], defined only when normalize_logits

  // Φ ~ N(0, 1/sqrt(d)); expert weights ~ N(0, 0.02).
  static SoftMoEParams init(const SoftMoEConfig& cfg, std::mt19937_64& rng, bool normalize_logits = false);

  std::int64_t total_slots() const { return phi.dim(1); }
  std::int64_t slots_per_expert() const { return total_slots() / static_cast<std::int64_t>(experts.size()); }

  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

template <typename T>
struct SoftMoETrace {
  Tensor<T> logits;      // [m, n·s]
  Tensor<T> dispatch;    // D [m, n·s], columns sum to 1
  Tensor<T> slots;       // X̃ = DᵀX [n·s, d]
  Tensor<T> expert_out;  // Y [n·s, d]
  Tensor<T> combine;     // S [m, n·s], rows sum to 1
};

struct SoftMoEOptions {
  // Constant added to every logit before both softmaxes. Test seam for the
  // shift-invariance property; leaves D and S unchanged by construction.
  double logit_offset = 0.0;
};

// D_ij = softmax over tokens i of (XΦ)_ij.
template <typename T> Tensor<T> dispatch_weights(const Tensor<T>& x, const Tensor<T>& phi);
// X̃ = DᵀX.
template <typename T> Tensor<T> slot_inputs(const Tensor<T>& dispatch, const Tensor<T>& x);
// Y row i = FFN_{⌊i/s⌋}(X̃_i).
template <typename T> Tensor<T> expert_apply(const Tensor<T>& slots, const std::vector<FFNParams<T>>& experts);
// S_ij = softmax over slots j of (XΦ)_ij.
template <typename T> Tensor<T> combine_weights(const Tensor<T>& x, const Tensor<T>& phi);

// X_out = S·Y. x is [m, d] or a batch [B, m, d]; batched inputs are routed
// per sample, so tokens of different samples never share a slot.
template <typename T>
Tensor<T> soft_moe_forward(const Tensor<T>& x, const SoftMoEParams<T>& params, SoftMoETrace<T>* trace = nullptr,
                           const SoftMoEOptions& options = {});

// d·(n·s) + n·(d·h + h + h·d + d).
std::int64_t soft_moe_param_count(const SoftMoEConfig& cfg);
// Parameters of one expert FFN: d·h + h + h·d + d.
std::int64_t expert_param_count(std::int64_t hidden, std::int64_t expert_hidden);

}  // namespace smt
