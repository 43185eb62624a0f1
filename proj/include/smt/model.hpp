// SPDX-License-Identifier: Apache-2.0
//
// Full segmentation network (Swin encoder + conv decoder), parameter
// accounting and Soft MoE memory estimates.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "smt/decoder.hpp"
#include "smt/swin.hpp"

namespace smt {

template <typename T>
class SwinSMT {
 public:
  SwinSMT() = default;
  SwinSMT(const SwinSMTConfig& cfg, std::uint64_t seed);

  const SwinSMTConfig& config() const { return encoder_.config(); }
  SwinEncoder<T>& encoder() { return encoder_; }
  const SwinEncoder<T>& encoder() const { return encoder_; }
  DecoderParams<T>& decoder() { return decoder_; }
  const DecoderParams<T>& decoder() const { return decoder_; }

  // x [C, p, p, p] -> logits [K+1, p, p, p]
  Tensor<T> forward(const Tensor<T>& x) const;

  // Visits every trainable tensor in a fixed order under "encoder.*" / "decoder.*".
  void visit(const ParamVisitor<T>& v);
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters();
  std::int64_t num_parameters();

 private:
  SwinEncoder<T> encoder_;
  DecoderParams<T> decoder_;
};

struct ParamBreakdown {
  std::int64_t total = 0;
  std::vector<std::pair<std::string, std::int64_t>> parts;  // stem, stage1..4, decoder
  std::int64_t moe_router = 0;                              // Φ (+ logit scale), included in the stage parts
  std::int64_t moe_experts = 0;
  std::int64_t moe_layers = 0;

  std::int64_t part(const std::string& name) const;
};

// Closed-form count from the config; agrees with SwinSMT::num_parameters.
ParamBreakdown param_count(const SwinSMTConfig& cfg);
// Parameters of one stage-s expert FFN.
std::int64_t expert_params_at_stage(const SwinSMTConfig& cfg, int stage);

struct MoEMemoryTerms {
  int stage = 0;
  std::int64_t tokens = 0;     // m = (p/2^i)³
  std::int64_t dim = 0;        // d
  std::int64_t experts = 0;    // n
  std::int64_t m_squared = 0;  // m²
  std::int64_t md = 0;         // m·d
  std::int64_t nd_squared = 0; // n·d²
  bool allowed = true;         // false for stage 1
};

// Terms of the O(m² + md + nd²) Soft MoE memory estimate for every stage,
// using `experts` for stages that have none configured (so the rejected
// stage-1 placement can still be sized).
std::vector<MoEMemoryTerms> moe_memory_estimate(const SwinSMTConfig& cfg, std::int64_t experts_if_none = 0);

}  // namespace smt
