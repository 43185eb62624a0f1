// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>

namespace smt {

inline constexpr int kNumStages = 4;

// Architecture description of a Swin SMT model.
//
// Stage i (1-based) runs its blocks on a (p / 2^i)³ token grid with
// embed_dim · 2^(i-1) channels and ends with a 2× patch merging, so the
// deepest feature map sits at p / 32. Stage 1 always uses a plain FFN;
// stages 2–4 use Soft MoE with `experts[i-1]` experts, or FFN when 0.
struct SwinSMTConfig {
  std::int64_t in_channels = 1;
  std::int64_t patch_size = 32;
  std::int64_t embed_dim = 12;
  std::array<std::int64_t, kNumStages> depths{2, 2, 2, 2};
  std::array<std::int64_t, kNumStages> num_heads{3, 6, 12, 24};
  std::int64_t window_size = 4;
  std::array<std::int64_t, kNumStages> experts{0, 4, 4, 4};
  std::int64_t num_classes = 4;
  std::int64_t mlp_ratio = 4;
  bool moe_normalize_logits = false;

  // Desk-scale profile used for training on phantoms.
  static SwinSMTConfig toy();
  // Full-size profile (p = 128, d₀ = 48, window 7, 117 classes, 32 experts).
  static SwinSMTConfig full();
  // Smallest valid profile, used for gradient verification.
  static SwinSMTConfig tiny();

  void validate() const;

  std::int64_t stage_grid(int stage) const { return patch_size >> stage; }
  std::int64_t stage_tokens(int stage) const {
    const auto g = stage_grid(stage);
    return g * g * g;
  }
  std::int64_t stage_dim(int stage) const { return embed_dim << (stage - 1); }
  bool stage_uses_moe(int stage) const { return experts[static_cast<std::size_t>(stage - 1)] > 0; }
  std::int64_t out_channels() const { return num_classes + 1; }
  // Effective window side on a grid of side g: the whole grid when g <= window.
  std::int64_t effective_window(std::int64_t grid) const { return grid <= window_size ? grid : window_size; }

  bool operator==(const SwinSMTConfig&) const = default;
};

std::string describe(const SwinSMTConfig& cfg);

}  // namespace smt
