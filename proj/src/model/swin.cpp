// SPDX-License-Identifier: Apache-2.0
#include "smt/swin.hpp"

#include <cmath>
#include <string>

#include "../tensor/graph.hpp"

namespace smt {

namespace {

std::int64_t flat3(const Grid3& c, const Grid3& dims) { return (c[0] * dims[1] + c[1]) * dims[2] + c[2]; }

Grid3 grid_of(const Shape& s, const char* what) {
  if (s.size() != 4) throw DimensionError(std::string(what) + " expects a [D, H, W, d] grid, got " + shape_str(s));
  return {s[0], s[1], s[2]};
}

// SW-MSA region label along one axis of the shifted, padded frame.
int region(std::int64_t c, std::int64_t padded, std::int64_t window, std::int64_t shift) {
  if (c < padded - window) return 0;
  if (c < padded - shift) return 1;
  return 2;
}

}  // namespace

void WindowSpec::validate() const {
  if (window < 1) throw ConfigError("window side must be positive");
  if (shift < 0 || shift >= window) {
    throw ConfigError("window shift " + std::to_string(shift) + " outside [0, " + std::to_string(window) + ")");
  }
}

std::int64_t relative_position_row(const Grid3& a, const Grid3& b, std::int64_t window) {
  const auto span = 2 * window - 1;
  const auto rz = a[0] - b[0] + window - 1;
  const auto ry = a[1] - b[1] + window - 1;
  const auto rx = a[2] - b[2] + window - 1;
  return (rz * span + ry) * span + rx;
}

WindowLayout WindowLayout::build(Grid3 grid, WindowSpec spec) {
  spec.validate();
  const auto w = spec.window;
  WindowLayout l;
  l.grid = grid;
  l.spec = spec;
  Grid3 nwin{};
  for (int a = 0; a < 3; ++a) {
    if (grid[a] < 1) throw ConfigError("window layout needs a non-empty grid");
    nwin[a] = (grid[a] + w - 1) / w;
    l.padded[a] = nwin[a] * w;
  }
  l.num_windows = nwin[0] * nwin[1] * nwin[2];
  const auto n = w * w * w;
  l.window_tokens = n;

  std::vector<Grid3> local(static_cast<std::size_t>(n));
  for (std::int64_t z = 0, i = 0; z < w; ++z)
    for (std::int64_t y = 0; y < w; ++y)
      for (std::int64_t x = 0; x < w; ++x) local[static_cast<std::size_t>(i++)] = {z, y, x};

  l.relative_index.resize(static_cast<std::size_t>(n * n));
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      l.relative_index[static_cast<std::size_t>(i * n + j)] =
          relative_position_row(local[static_cast<std::size_t>(i)], local[static_cast<std::size_t>(j)], w);

  l.gather.resize(static_cast<std::size_t>(l.num_windows * n));
  std::vector<int> label(l.gather.size(), 0);
  bool any_pad = false;
  for (std::int64_t win = 0; win < l.num_windows; ++win) {
    const Grid3 wc{win / (nwin[1] * nwin[2]), (win / nwin[2]) % nwin[1], win % nwin[2]};
    for (std::int64_t i = 0; i < n; ++i) {
      const auto& lc = local[static_cast<std::size_t>(i)];
      bool pad = false;
      Grid3 src{};
      int lab = 0;
      for (int a = 0; a < 3; ++a) {
        const auto c = wc[a] * w + lc[a];
        src[a] = (c + spec.shift) % l.padded[a];
        if (src[a] >= grid[a]) pad = true;
        lab = lab * 3 + (spec.shift > 0 ? region(c, l.padded[a], w, spec.shift) : 0);
      }
      const auto slot = static_cast<std::size_t>(win * n + i);
      l.gather[slot] = pad ? -1 : flat3(src, grid);
      label[slot] = lab;
      any_pad = any_pad || pad;
    }
  }

  if (spec.shift > 0 || any_pad) {
    l.mask.assign(static_cast<std::size_t>(l.num_windows * n * n), 0.0);
    for (std::int64_t win = 0; win < l.num_windows; ++win)
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
          const auto si = static_cast<std::size_t>(win * n + i), sj = static_cast<std::size_t>(win * n + j);
          if (label[si] != label[sj] || l.gather[sj] < 0) {
            l.mask[static_cast<std::size_t>((win * n + i) * n + j)] = kMaskedLogit;
          }
        }
  }
  return l;
}

template <typename T>
WindowPlan<T> WindowPlan<T>::make(Grid3 grid, WindowSpec spec) {
  WindowPlan p;
  p.layout = WindowLayout::build(grid, spec);
  if (!p.layout.mask.empty()) {
    const auto n = p.layout.window_tokens;
    p.mask = Tensor<T>({p.layout.num_windows, n, n},
                       std::vector<T>(p.layout.mask.begin(), p.layout.mask.end()));
  }
  return p;
}

template <typename T>
Tensor<T> window_partition(const Tensor<T>& grid, std::int64_t window) {
  const auto g = grid_of(grid.shape(), "window_partition");
  for (auto side : g) {
    if (window < 1 || side % window != 0) {
      throw ConfigError("grid " + shape_str(grid.shape()) + " is not divisible by window " + std::to_string(window));
    }
  }
  const auto layout = WindowLayout::build(g, {window, 0});
  const auto d = grid.dim(3);
  auto rows = gather_rows(reshape(grid, {layout.tokens(), d}), layout.gather);
  return reshape(rows, {layout.num_windows, layout.window_tokens, d});
}

template <typename T>
Tensor<T> window_reverse(const Tensor<T>& windows, Grid3 grid, std::int64_t window) {
  for (auto side : grid) {
    if (window < 1 || side % window != 0) throw ConfigError("grid is not divisible by window " + std::to_string(window));
  }
  const auto layout = WindowLayout::build(grid, {window, 0});
  if (windows.ndim() != 3 || windows.dim(0) != layout.num_windows || windows.dim(1) != layout.window_tokens) {
    throw DimensionError("window_reverse got " + shape_str(windows.shape()) + " for the requested grid");
  }
  const auto d = windows.dim(2);
  auto rows = scatter_rows(reshape(windows, {layout.num_windows * layout.window_tokens, d}), layout.gather,
                           layout.tokens());
  return reshape(rows, {grid[0], grid[1], grid[2], d});
}

template <typename T>
Tensor<T> cyclic_shift(const Tensor<T>& grid, std::int64_t offset) {
  const auto g = grid_of(grid.shape(), "cyclic_shift");
  Index idx(static_cast<std::size_t>(g[0] * g[1] * g[2]));
  for (std::int64_t z = 0; z < g[0]; ++z)
    for (std::int64_t y = 0; y < g[1]; ++y)
      for (std::int64_t x = 0; x < g[2]; ++x) {
        const Grid3 src{((z + offset) % g[0] + g[0]) % g[0], ((y + offset) % g[1] + g[1]) % g[1],
                        ((x + offset) % g[2] + g[2]) % g[2]};
        idx[static_cast<std::size_t>(flat3({z, y, x}, g))] = flat3(src, g);
      }
  const auto d = grid.dim(3);
  return reshape(gather_rows(reshape(grid, {g[0] * g[1] * g[2], d}), idx), grid.shape());
}

template <typename T>
Tensor<T> inverse_cyclic_shift(const Tensor<T>& grid, std::int64_t offset) {
  return cyclic_shift(grid, -offset);
}

template <typename T>
AttentionParams<T> AttentionParams<T>::init(std::int64_t dim, std::int64_t heads, std::int64_t window,
                                            std::mt19937_64& rng) {
  if (heads < 1 || dim % heads != 0) {
    throw ConfigError(std::to_string(heads) + " heads do not divide width " + std::to_string(dim));
  }
  AttentionParams p;
  p.qkv = Linear<T>::init(dim, 3 * dim, true, rng);
  p.proj = Linear<T>::init(dim, dim, true, rng);
  p.bias_table = Tensor<T>::zeros({relative_table_rows(window), heads}, true);
  p.heads = heads;
  p.window = window;
  p.relative_index = WindowLayout::build({window, window, window}, {window, 0}).relative_index;
  return p;
}

template <typename T>
void AttentionParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  qkv.visit(join_name(prefix, "qkv"), v);
  proj.visit(join_name(prefix, "proj"), v);
  v(join_name(prefix, "relative_bias"), bias_table);
}

template <typename T>
Tensor<T> window_attention(const Tensor<T>& tokens, const AttentionParams<T>& p, const Tensor<T>& mask,
                           Tensor<T>* weights_out) {
  if (tokens.ndim() != 3) throw DimensionError("window_attention expects [nW, N, d], got " + shape_str(tokens.shape()));
  const auto nw = tokens.dim(0), n = tokens.dim(1), d = tokens.dim(2), h = p.heads;
  if (h < 1 || d % h != 0) {
    throw ConfigError(std::to_string(h) + " heads do not divide width " + std::to_string(d));
  }
  if (n != p.window * p.window * p.window) {
    throw DimensionError("window_attention: " + std::to_string(n) + " tokens per window, parameters built for window " +
                         std::to_string(p.window));
  }
  const auto dh = d / h;
  auto qkv = permute(reshape(p.qkv(tokens), {nw, n, 3, h, dh}), {2, 0, 3, 1, 4});
  auto part = [&](int k) { return reshape(slice(qkv, 0, k, 1), {nw, h, n, dh}); };
  auto q = scale(part(0), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  auto k = part(1);
  auto v = part(2);
  auto logits = matmul(q, transpose(k));
  auto bias = permute(reshape(gather_rows(p.bias_table, p.relative_index), {n, n, h}), {2, 0, 1});
  logits = add(logits, bias);
  if (mask.defined()) {
    if (mask.shape() != Shape{nw, n, n}) {
      throw DimensionError("attention mask " + shape_str(mask.shape()) + " does not match " + shape_str(tokens.shape()));
    }
    logits = add(logits, reshape(mask, {nw, 1, n, n}));
  }
  auto attn = softmax(logits, -1);
  if (weights_out) *weights_out = attn;
  auto out = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {nw, n, d});
  return p.proj(out);
}

template <typename T>
Tensor<T> SwinBlockParams<T>::mix(const Tensor<T>& x) const {
  if (moe) return soft_moe_forward(x, *moe);
  if (ffn) return (*ffn)(x);
  throw ContractError("Swin block has no mixer");
}

template <typename T>
void SwinBlockParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  ln1.visit(join_name(prefix, "norm1"), v);
  attn.visit(join_name(prefix, "attn"), v);
  ln2.visit(join_name(prefix, "norm2"), v);
  if (ffn) ffn->visit(join_name(prefix, "ffn"), v);
  if (moe) moe->visit(join_name(prefix, "moe"), v);
}

template <typename T>
Tensor<T> swin_block_forward(const Tensor<T>& z, const SwinBlockParams<T>& p, const WindowPlan<T>& plan) {
  const auto& l = plan.layout;
  if (z.ndim() != 2 || z.dim(0) != l.tokens()) {
    throw DimensionError("Swin block expects [" + std::to_string(l.tokens()) + ", d] tokens, got " +
                         shape_str(z.shape()));
  }
  const auto m = z.dim(0), d = z.dim(1);
  auto windows = reshape(gather_rows(p.ln1(z), l.gather), {l.num_windows, l.window_tokens, d});
  auto attended = window_attention(windows, p.attn, plan.mask);
  auto back = scatter_rows(reshape(attended, {l.num_windows * l.window_tokens, d}), l.gather, m);
  auto zhat = add(z, back);
  return add(zhat, p.mix(p.ln2(zhat)));
}

template <typename T>
PatchMergingParams<T> PatchMergingParams<T>::init(std::int64_t dim, std::mt19937_64& rng) {
  return {LayerNormParams<T>::init(8 * dim), Linear<T>::init(8 * dim, 2 * dim, false, rng)};
}

template <typename T>
void PatchMergingParams<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  norm.visit(join_name(prefix, "norm"), v);
  reduce.visit(join_name(prefix, "reduce"), v);
}

Index patch_merging_index(const Grid3& g) {
  for (auto side : g) {
    if (side % 2 != 0) throw ConfigError("patch merging needs even grid sides");
  }
  const Grid3 o{g[0] / 2, g[1] / 2, g[2] / 2};
  Index idx;
  idx.reserve(static_cast<std::size_t>(g[0] * g[1] * g[2]));
  for (std::int64_t z = 0; z < o[0]; ++z)
    for (std::int64_t y = 0; y < o[1]; ++y)
      for (std::int64_t x = 0; x < o[2]; ++x)
        for (std::int64_t k = 0; k < 8; ++k) idx.push_back(flat3({2 * z + k / 4, 2 * y + (k / 2) % 2, 2 * x + k % 2}, g));
  return idx;
}

template <typename T>
Tensor<T> patch_merging(const Tensor<T>& grid, const PatchMergingParams<T>& p) {
  const auto g = grid_of(grid.shape(), "patch_merging");
  const auto d = grid.dim(3);
  const auto idx = patch_merging_index(g);
  const auto m = g[0] * g[1] * g[2];
  auto merged = reshape(gather_rows(reshape(grid, {m, d}), idx), {m / 8, 8 * d});
  auto out = p.reduce(p.norm(merged));
  return reshape(out, {g[0] / 2, g[1] / 2, g[2] / 2, 2 * d});
}

Index stem_index(std::int64_t channels, const Grid3& dims) {
  for (auto side : dims) {
    if (side % 2 != 0) throw ConfigError("stem needs even spatial dimensions");
  }
  const Grid3 o{dims[0] / 2, dims[1] / 2, dims[2] / 2};
  const auto vox = dims[0] * dims[1] * dims[2];
  Index idx;
  idx.reserve(static_cast<std::size_t>(channels * vox));
  for (std::int64_t z = 0; z < o[0]; ++z)
    for (std::int64_t y = 0; y < o[1]; ++y)
      for (std::int64_t x = 0; x < o[2]; ++x)
        for (std::int64_t c = 0; c < channels; ++c)
          for (std::int64_t k = 0; k < 8; ++k)
            idx.push_back(c * vox + flat3({2 * z + k / 4, 2 * y + (k / 2) % 2, 2 * x + k % 2}, dims));
  return idx;
}

template <typename T>
Tensor<T> stem_forward(const Tensor<T>& x, const Linear<T>& proj) {
  if (x.ndim() != 4) throw DimensionError("stem expects [C, D, H, W], got " + shape_str(x.shape()));
  const auto c = x.dim(0);
  const Grid3 dims{x.dim(1), x.dim(2), x.dim(3)};
  const auto idx = stem_index(c, dims);
  const auto tokens = dims[0] * dims[1] * dims[2] / 8;
  if (proj.weight.dim(0) != 8 * c) {
    throw DimensionError("stem projection expects " + std::to_string(proj.weight.dim(0) / 8) + " channels, got " +
                         std::to_string(c));
  }
  return proj(gather(x, idx, {tokens, 8 * c}));
}

template <typename T>
Tensor<T> tokens_to_volume(const Tensor<T>& tokens, const Grid3& grid) {
  if (tokens.ndim() != 2 || tokens.dim(0) != grid[0] * grid[1] * grid[2]) {
    throw DimensionError("tokens " + shape_str(tokens.shape()) + " do not fill the grid");
  }
  return reshape(transpose(tokens), {tokens.dim(1), grid[0], grid[1], grid[2]});
}

template <typename T>
SwinEncoder<T>::SwinEncoder(const SwinSMTConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  // The stem is a 2x2x2 strided conv, so it takes conv-style init rather than the 0.02 normal.
  const auto fan_in = 8 * cfg_.in_channels;
  const auto bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  stem_.weight = Tensor<T>::uniform({fan_in, cfg_.embed_dim}, rng, -bound, bound, true);
  stem_.bias = Tensor<T>::uniform({cfg_.embed_dim}, rng, -bound, bound, true);
  for (int s = 1; s <= kNumStages; ++s) {
    const auto i = static_cast<std::size_t>(s - 1);
    const auto g = cfg_.stage_grid(s);
    const auto w = cfg_.effective_window(g);
    const auto shift = g <= cfg_.window_size ? 0 : w / 2;
    plans_[i][0] = WindowPlan<T>::make({g, g, g}, {w, 0});
    plans_[i][1] = WindowPlan<T>::make({g, g, g}, {w, shift});
    const auto d = cfg_.stage_dim(s);
    auto& st = stages_[i];
    for (std::int64_t b = 0; b < cfg_.depths[i]; ++b) {
      SwinBlockParams<T> blk;
      blk.ln1 = LayerNormParams<T>::init(d);
      blk.attn = AttentionParams<T>::init(d, cfg_.num_heads[i], w, rng);
      blk.ln2 = LayerNormParams<T>::init(d);
      if (cfg_.stage_uses_moe(s)) {
        auto moe_cfg = SoftMoEConfig::for_stage(cfg_.stage_tokens(s), d, cfg_.experts[i]);
        moe_cfg.mlp_ratio = cfg_.mlp_ratio;
        blk.moe = SoftMoEParams<T>::init(moe_cfg, rng, cfg_.moe_normalize_logits);
      } else {
        blk.ffn = FFNParams<T>::init(d, cfg_.mlp_ratio * d, rng);
      }
      st.blocks.push_back(std::move(blk));
    }
    st.merge = PatchMergingParams<T>::init(d, rng);
  }
}

template <typename T>
EncoderFeatures<T> SwinEncoder<T>::forward(const Tensor<T>& x) const {
  const auto p = cfg_.patch_size;
  if (x.shape() != Shape{cfg_.in_channels, p, p, p}) {
    throw ConfigError("encoder input " + shape_str(x.shape()) + " does not match configured ROI " +
                      shape_str({cfg_.in_channels, p, p, p}));
  }
  EncoderFeatures<T> f;
  auto z = stem_forward(x, stem_);
  auto g = cfg_.stage_grid(1);
  f.maps[0] = tokens_to_volume(layer_norm(z), {g, g, g});
  for (int s = 1; s <= kNumStages; ++s) {
    const auto i = static_cast<std::size_t>(s - 1);
    const auto& st = stages_[i];
    f.stage_tokens[i] = z.dim(0);
    if (z.dim(0) != cfg_.stage_tokens(s)) throw ContractError("token count drifted from (p/2^i)^3");
    for (std::size_t b = 0; b < st.blocks.size(); ++b) z = swin_block_forward(z, st.blocks[b], plans_[i][b % 2]);
    const auto d = z.dim(1);
    z = patch_merging(reshape(z, {g, g, g, d}), st.merge);
    g /= 2;
    z = reshape(z, {g * g * g, 2 * d});
    f.maps[static_cast<std::size_t>(s)] = tokens_to_volume(layer_norm(z), {g, g, g});
  }
  return f;
}

template <typename T>
void SwinEncoder<T>::visit(const std::string& prefix, const ParamVisitor<T>& v) {
  stem_.visit(join_name(prefix, "stem"), v);
  for (int s = 1; s <= kNumStages; ++s) {
    auto& st = stages_[static_cast<std::size_t>(s - 1)];
    const auto sp = join_name(prefix, "stages." + std::to_string(s));
    for (std::size_t b = 0; b < st.blocks.size(); ++b) st.blocks[b].visit(join_name(sp, "blocks." + std::to_string(b)), v);
    st.merge.visit(join_name(sp, "merge"), v);
  }
}

#define SMT_INST(T)                                                                                         \
  template struct WindowPlan<T>;                                                                            \
  template Tensor<T> window_partition(const Tensor<T>&, std::int64_t);                                      \
  template Tensor<T> window_reverse(const Tensor<T>&, Grid3, std::int64_t);                                 \
  template Tensor<T> cyclic_shift(const Tensor<T>&, std::int64_t);                                          \
  template Tensor<T> inverse_cyclic_shift(const Tensor<T>&, std::int64_t);                                  \
  template struct AttentionParams<T>;                                                                       \
  template Tensor<T> window_attention(const Tensor<T>&, const AttentionParams<T>&, const Tensor<T>&,        \
                                      Tensor<T>*);                                                          \
  template struct SwinBlockParams<T>;                                                                       \
  template Tensor<T> swin_block_forward(const Tensor<T>&, const SwinBlockParams<T>&, const WindowPlan<T>&); \
  template struct PatchMergingParams<T>;                                                                    \
  template Tensor<T> patch_merging(const Tensor<T>&, const PatchMergingParams<T>&);                         \
  template Tensor<T> stem_forward(const Tensor<T>&, const Linear<T>&);                                      \
  template Tensor<T> tokens_to_volume(const Tensor<T>&, const Grid3&);                                      \
  template class SwinEncoder<T>;
SMT_INSTANTIATE_FLOAT_TYPES(SMT_INST)
#undef SMT_INST

}  // namespace smt
