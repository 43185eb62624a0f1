// SPDX-License-Identifier: Apache-2.0
//
// 3D Swin encoder: stem, window partitioning with cyclic shift, windowed
// multi-head attention, Swin blocks, patch merging and the four-stage stack.
//
// Token grids are stored channel-last as [D, H, W, d] or flattened [D·H·W, d]
// in row-major (z, y, x) order.
#pragma once

#include <array>
#include <optional>
#include <random>
#include <vector>

#include "smt/config.hpp"
#include "smt/layers.hpp"
#include "smt/soft_moe.hpp"

namespace smt {

using Grid3 = std::array<std::int64_t, 3>;

inline constexpr double kMaskedLogit = -1e9;

struct WindowSpec {
  std::int64_t window = 1;
  std::int64_t shift = 0;  // 0 for W-MSA, window/2 for SW-MSA

  void validate() const;
};

// Token routing for one (grid, window, shift) triple. Grid sides that are
// not multiples of the window are zero-padded; padded slots carry index -1
// and are masked as attention keys.
struct WindowLayout {
  Grid3 grid{};
  Grid3 padded{};
  WindowSpec spec;
  std::int64_t num_windows = 0;
  std::int64_t window_tokens = 0;
  Index gather;                // [num_windows · window_tokens] -> token row or -1
  std::vector<double> mask;    // [num_windows, N, N] of 0 / kMaskedLogit; empty if nothing is masked
  Index relative_index;        // [N · N] rows of the relative bias table

  static WindowLayout build(Grid3 grid, WindowSpec spec);
  std::int64_t tokens() const { return grid[0] * grid[1] * grid[2]; }
};

// Row of the relative-position table for the pair (a, b) of local window coordinates.
std::int64_t relative_position_row(const Grid3& a, const Grid3& b, std::int64_t window);
inline std::int64_t relative_table_rows(std::int64_t window) {
  const auto s = 2 * window - 1;
  return s * s * s;
}

// Window layout with the mask materialized in the working precision.
template <typename T>
struct WindowPlan {
  WindowLayout layout;
  Tensor<T> mask;  // [nW, N, N] or undefined

  static WindowPlan make(Grid3 grid, WindowSpec spec);
};

// grid [D, H, W, d] -> [num_windows, w³, d]; every side must be a multiple of w.
template <typename T> Tensor<T> window_partition(const Tensor<T>& grid, std::int64_t window);
template <typename T> Tensor<T> window_reverse(const Tensor<T>& windows, Grid3 grid, std::int64_t window);
// Circular roll by -offset on each spatial axis of [D, H, W, d]: out[i] = in[(i + offset) mod L].
template <typename T> Tensor<T> cyclic_shift(const Tensor<T>& grid, std::int64_t offset);
template <typename T> Tensor<T> inverse_cyclic_shift(const Tensor<T>& grid, std::int64_t offset);

template <typename T>
struct AttentionParams {
  Linear<T> qkv;          // [d, 3d]
  Linear<T> proj;         // [d, d]
  Tensor<T> bias_table;   // [(2w-1)³, heads]
  std::int64_t heads = 1;
  std::int64_t window = 1;
  Index relative_index;   // [w⁶]

  static AttentionParams init(std::int64_t dim, std::int64_t heads, std::int64_t window, std::mt19937_64& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

// tokens [nW, w³, d]; mask [nW, w³, w³] additive or undefined.
// `weights_out` receives the post-softmax attention [nW, heads, w³, w³].
template <typename T>
Tensor<T> window_attention(const Tensor<T>& tokens, const AttentionParams<T>& params, const Tensor<T>& mask = {},
                           Tensor<T>* weights_out = nullptr);

template <typename T>
struct SwinBlockParams {
  LayerNormParams<T> ln1;
  AttentionParams<T> attn;
  LayerNormParams<T> ln2;
  std::optional<FFNParams<T>> ffn;
  std::optional<SoftMoEParams<T>> moe;

  bool uses_moe() const { return moe.has_value(); }
  Tensor<T> mix(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

// z [m, d] -> z' [m, d]:  ẑ = MSA(LN(z)) + z;  z' = Mixer(LN(ẑ)) + ẑ.
template <typename T>
Tensor<T> swin_block_forward(const Tensor<T>& z, const SwinBlockParams<T>& params, const WindowPlan<T>& plan);

template <typename T>
struct PatchMergingParams {
  LayerNormParams<T> norm;  // over 8d
  Linear<T> reduce;         // [8d, 2d], no bias

  static PatchMergingParams init(std::int64_t dim, std::mt19937_64& rng);
  void visit(const std::string& prefix, const ParamVisitor<T>& v);
};

// Neighbor k = dz·4 + dy·2 + dx of output cell o fills features [k·d, (k+1)·d).
Index patch_merging_index(const Grid3& grid);
// grid [D, H, W, d] -> [D/2, H/2, W/2, 2d]
template <typename T> Tensor<T> patch_merging(const Tensor<T>& grid, const PatchMergingParams<T>& params);

// Voxel index feeding feature c·8 + dz·4 + dy·2 + dx of each stem token.
Index stem_index(std::int64_t channels, const Grid3& dims);
// x [C, D, H, W] -> [(D·H·W)/8, d₀]
template <typename T> Tensor<T> stem_forward(const Tensor<T>& x, const Linear<T>& proj);

template <typename T>
struct StageParams {
  std::vector<SwinBlockParams<T>> blocks;
  PatchMergingParams<T> merge;
};

// Channel-first pyramid: maps[0] is the stem output at p/2, maps[i] the
// merged output of stage i at p/2^(i+1). Each is layer-normed (no affine).
template <typename T>
struct EncoderFeatures {
  std::array<Tensor<T>, kNumStages + 1> maps;
  std::array<std::int64_t, kNumStages> stage_tokens{};
};

template <typename T>
class SwinEncoder {
 public:
  SwinEncoder() = default;
  SwinEncoder(const SwinSMTConfig& cfg, std::mt19937_64& rng);

  const SwinSMTConfig& config() const { return cfg_; }
  Linear<T>& stem() { return stem_; }
  const Linear<T>& stem() const { return stem_; }
  StageParams<T>& stage(int s) { return stages_[static_cast<std::size_t>(s - 1)]; }
  const StageParams<T>& stage(int s) const { return stages_[static_cast<std::size_t>(s - 1)]; }
  const WindowPlan<T>& plan(int s, bool shifted) const { return plans_[static_cast<std::size_t>(s - 1)][shifted]; }

  EncoderFeatures<T> forward(const Tensor<T>& x) const;
  void visit(const std::string& prefix, const ParamVisitor<T>& v);

 private:
  SwinSMTConfig cfg_;
  Linear<T> stem_;
  std::array<StageParams<T>, kNumStages> stages_;
  std::array<std::array<WindowPlan<T>, 2>, kNumStages> plans_;
};

template <typename T>
EncoderFeatures<T> encoder_forward(const Tensor<T>& x, const SwinEncoder<T>& encoder) {
  return encoder.forward(x);
}

// [m, d] tokens on a cube of side g -> [d, g, g, g]
template <typename T> Tensor<T> tokens_to_volume(const Tensor<T>& tokens, const Grid3& grid);

}  // namespace smt
