// SPDX-License-Identifier: Apache-2.0
#include "smt/model.hpp"

#include "../tensor/graph.hpp"

namespace smt {

template <typename T>
SwinSMT<T>::SwinSMT(const SwinSMTConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  encoder_ = SwinEncoder<T>(cfg, rng);
  decoder_ = DecoderParams<T>::init(cfg, rng);
}

template <typename T>
Tensor<T> SwinSMT<T>::forward(const Tensor<T>& x) const {
  return decoder_forward(x, encoder_.forward(x), decoder_);
}

template <typename T>
void SwinSMT<T>::visit(const ParamVisitor<T>& v) {
  encoder_.visit("encoder", v);
  decoder_.visit("decoder", v);
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> SwinSMT<T>::named_parameters() {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  visit([&](const std::string& n, Tensor<T>& t) { out.emplace_back(n, t); });
  return out;
}

template <typename T>
std::int64_t SwinSMT<T>::num_parameters() {
  std::int64_t n = 0;
  visit([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
  return n;
}

template class SwinSMT<float>;
template class SwinSMT<double>;

std::int64_t ParamBreakdown::part(const std::string& name) const {
  for (const auto& [k, v] : parts) {
    if (k == name) return v;
  }
  throw std::out_of_range("no parameter group named " + name);
}

std::int64_t expert_params_at_stage(const SwinSMTConfig& cfg, int stage) {
  const auto d = cfg.stage_dim(stage);
  return expert_param_count(d, cfg.mlp_ratio * d);
}

namespace {

std::int64_t res_block(std::int64_t in, std::int64_t out) { return 27 * in * out + 27 * out * out + (in != out ? in * out : 0); }
std::int64_t up_block(std::int64_t in, std::int64_t out) { return 8 * in * out + res_block(2 * out, out); }

}  // namespace

ParamBreakdown param_count(const SwinSMTConfig& cfg) {
  cfg.validate();
  ParamBreakdown b;
  const auto c = cfg.in_channels, fs = cfg.embed_dim;
  b.parts.emplace_back("stem", 8 * c * fs + fs);
  for (int s = 1; s <= kNumStages; ++s) {
    const auto i = static_cast<std::size_t>(s - 1);
    const auto d = cfg.stage_dim(s);
    const auto w = cfg.effective_window(cfg.stage_grid(s));
    const auto attn = 3 * d * d + 3 * d + d * d + d + relative_table_rows(w) * cfg.num_heads[i];
    std::int64_t mixer = 0;
    if (cfg.stage_uses_moe(s)) {
      const auto router = d * cfg.stage_tokens(s) + (cfg.moe_normalize_logits ? 1 : 0);
      const auto experts = cfg.experts[i] * expert_params_at_stage(cfg, s);
      b.moe_router += cfg.depths[i] * router;
      b.moe_experts += cfg.depths[i] * experts;
      b.moe_layers += cfg.depths[i];
      mixer = router + experts;
    } else {
      mixer = expert_params_at_stage(cfg, s);
    }
    const auto merge = 16 * d + 16 * d * d;
    b.parts.emplace_back("stage" + std::to_string(s), cfg.depths[i] * (4 * d + attn + mixer) + merge);
  }
  const auto dec = res_block(c, fs) + res_block(fs, fs) + res_block(2 * fs, 2 * fs) + res_block(4 * fs, 4 * fs) +
                   res_block(16 * fs, 16 * fs) + up_block(16 * fs, 8 * fs) + up_block(8 * fs, 4 * fs) +
                   up_block(4 * fs, 2 * fs) + up_block(2 * fs, fs) + up_block(fs, fs) +
                   cfg.out_channels() * fs + cfg.out_channels();
  b.parts.emplace_back("decoder", dec);
  for (const auto& [k, v] : b.parts) b.total += v;
  return b;
}

std::vector<MoEMemoryTerms> moe_memory_estimate(const SwinSMTConfig& cfg, std::int64_t experts_if_none) {
  std::vector<MoEMemoryTerms> out;
  for (int s = 1; s <= kNumStages; ++s) {
    MoEMemoryTerms t;
    t.stage = s;
    t.tokens = cfg.stage_tokens(s);
    t.dim = cfg.stage_dim(s);
    t.experts = cfg.stage_uses_moe(s) ? cfg.experts[static_cast<std::size_t>(s - 1)] : experts_if_none;
    t.m_squared = t.tokens * t.tokens;
    t.md = t.tokens * t.dim;
    t.nd_squared = t.experts * t.dim * t.dim;
    t.allowed = s != 1;
    out.push_back(t);
  }
  return out;
}

}  // namespace smt
