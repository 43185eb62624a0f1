// SPDX-License-Identifier: Apache-2.0
#include "smt/inference.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <type_traits>

#include "smt/faults.hpp"
#include "../tensor/graph.hpp"

namespace smt {

void SlidingWindowConfig::validate() const {
  if (roi < 1) throw ConfigError("sliding window roi must be >= 1");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw ConfigError("sliding window overlap must lie in [0, 1)");
  if (mode == BlendMode::gaussian && !(sigma_scale > 0.0)) throw ConfigError("sigma_scale must be > 0");
}

template <typename T>
Tensor<T> gaussian_importance_map(std::int64_t roi, double sigma_scale) {
  if (roi < 1) throw ConfigError("importance map roi must be >= 1");
  if (!(sigma_scale > 0.0)) throw ConfigError("sigma_scale must be > 0");
  const double sigma = sigma_scale * static_cast<double>(roi);
  const double centre = 0.5 * static_cast<double>(roi - 1);
  std::vector<double> axis(static_cast<std::size_t>(roi));
  for (std::int64_t i = 0; i < roi; ++i) {
    const double d = static_cast<double>(i) - centre;
    axis[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  const double peak = *std::max_element(axis.begin(), axis.end());
  for (auto& a : axis) a /= peak;

  std::vector<T> v(static_cast<std::size_t>(roi * roi * roi));
  std::size_t o = 0;
  for (double az : axis)
    for (double ay : axis)
      for (double ax : axis) v[o++] = static_cast<T>(std::max(az * ay * ax, kImportanceFloor));
  return Tensor<T>({roi, roi, roi}, std::move(v));
}

std::vector<std::int64_t> tile_starts(std::int64_t length, std::int64_t roi, double overlap) {
  if (roi < 1 || length < roi) {
    throw ConfigError("cannot tile length " + std::to_string(length) + " with roi " + std::to_string(roi));
  }
  const auto stride = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(roi * (1.0 - overlap))));
  std::vector<std::int64_t> starts;
  for (std::int64_t s = 0;; s += stride) {
    if (s + roi >= length) {
      starts.push_back(length - roi);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

std::vector<Origin3> tile_rois(const Origin3& volume, std::int64_t roi, double overlap) {
  std::array<std::vector<std::int64_t>, 3> axes;
  for (int a = 0; a < 3; ++a) {
    if (volume[a] < 1) throw DimensionError("volume sides must be >= 1");
    axes[a] = tile_starts(std::max(volume[a], roi), roi, overlap);
  }
  std::vector<Origin3> out;
  for (auto z : axes[0])
    for (auto y : axes[1])
      for (auto x : axes[2]) out.push_back({z, y, x});
  return out;
}

Origin3 roi_padding(const Origin3& volume, std::int64_t roi) {
  Origin3 pad{};
  for (int a = 0; a < 3; ++a) pad[a] = volume[a] < roi ? (roi - volume[a]) / 2 : 0;
  return pad;
}

template <typename T>
Tensor<T> sliding_window_infer(const Tensor<T>& volume, const TileFn<T>& fn, const SlidingWindowConfig& cfg) {
  cfg.validate();
  if (volume.ndim() != 4) throw DimensionError("sliding window input must be [C, D, H, W], got " + shape_str(volume.shape()));
  // Wider accumulator so that a voxel with a single tile, or a constant
  // prediction, divides back to the tile value exactly.
  using Acc = std::conditional_t<std::is_same_v<T, float>, double, long double>;

  const auto c = volume.dim(0), r = cfg.roi;
  const Origin3 side{volume.dim(1), volume.dim(2), volume.dim(3)};
  const auto pad = roi_padding(side, r);
  Origin3 full;
  for (int a = 0; a < 3; ++a) full[a] = std::max(side[a], r);
  const auto plane = full[1] * full[2], vox = full[0] * plane;

  std::vector<T> src(static_cast<std::size_t>(c * vox), T(0));
  const auto in = volume.data();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t z = 0; z < side[0]; ++z)
      for (std::int64_t y = 0; y < side[1]; ++y) {
        const auto* from = in.data() + ((ch * side[0] + z) * side[1] + y) * side[2];
        auto* to = src.data() + ch * vox + (z + pad[0]) * plane + (y + pad[1]) * full[2] + pad[2];
        std::copy(from, from + side[2], to);
      }

  const auto r3 = r * r * r;
  std::vector<Acc> weight(static_cast<std::size_t>(r3), Acc(1));
  if (cfg.mode == BlendMode::gaussian) {
    const auto g = gaussian_importance_map<T>(r, cfg.sigma_scale);
    for (std::int64_t i = 0; i < r3; ++i) weight[static_cast<std::size_t>(i)] = static_cast<Acc>(g.data()[i]);
  }

  std::int64_t k = -1;
  std::vector<Acc> acc, wsum(static_cast<std::size_t>(vox), Acc(0));
  std::vector<T> tile(static_cast<std::size_t>(c * r3));
  for (const auto& o : tile_rois(side, r, cfg.overlap)) {
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t z = 0; z < r; ++z)
        for (std::int64_t y = 0; y < r; ++y) {
          const auto* from = src.data() + ch * vox + (o[0] + z) * plane + (o[1] + y) * full[2] + o[2];
          std::copy(from, from + r, tile.data() + ((ch * r + z) * r + y) * r);
        }
    const auto logits = fn(Tensor<T>({c, r, r, r}, tile));
    if (k < 0) {
      if (logits.ndim() != 4 || logits.dim(0) < 1) {
        throw DimensionError("tile model must return [K, roi, roi, roi], got " + shape_str(logits.shape()));
      }
      k = logits.dim(0);
      acc.assign(static_cast<std::size_t>(k * vox), Acc(0));
    }
    if (logits.shape() != Shape{k, r, r, r}) {
      throw DimensionError("tile model returned " + shape_str(logits.shape()) + ", expected " + shape_str({k, r, r, r}));
    }
    const auto out = logits.data();
    for (std::int64_t z = 0; z < r; ++z)
      for (std::int64_t y = 0; y < r; ++y)
        for (std::int64_t x = 0; x < r; ++x) {
          const auto t = (z * r + y) * r + x;
          const auto v = (o[0] + z) * plane + (o[1] + y) * full[2] + o[2] + x;
          const auto w = weight[static_cast<std::size_t>(t)];
          wsum[static_cast<std::size_t>(v)] += w;
          for (std::int64_t ch = 0; ch < k; ++ch) {
            acc[static_cast<std::size_t>(ch * vox + v)] += w * static_cast<Acc>(out[ch * r3 + t]);
          }
        }
  }

  std::vector<T> res(static_cast<std::size_t>(k * side[0] * side[1] * side[2]));
  const bool raw = active_fault() == Fault::unnormalized_blend;
  std::size_t o = 0;
  for (std::int64_t ch = 0; ch < k; ++ch)
    for (std::int64_t z = 0; z < side[0]; ++z)
      for (std::int64_t y = 0; y < side[1]; ++y)
        for (std::int64_t x = 0; x < side[2]; ++x) {
          const auto v = (z + pad[0]) * plane + (y + pad[1]) * full[2] + x + pad[2];
          res[o++] = static_cast<T>(acc[static_cast<std::size_t>(ch * vox + v)] / (raw ? Acc(1) : wsum[static_cast<std::size_t>(v)]));
        }
  return Tensor<T>({k, side[0], side[1], side[2]}, std::move(res));
}

template <typename T>
Tensor<T> sliding_window_infer(const Tensor<T>& volume, const SwinSMT<T>& model, const SlidingWindowConfig& cfg) {
  if (cfg.roi != model.config().patch_size) {
    throw ConfigError("sliding window roi " + std::to_string(cfg.roi) + " differs from model patch size " +
                      std::to_string(model.config().patch_size));
  }
  NoGradGuard no_grad;
  return sliding_window_infer<T>(volume, [&](const Tensor<T>& x) { return model.forward(x); }, cfg);
}

template <typename T>
Labels argmax_labels(const Tensor<T>& logits) {
  if (logits.ndim() < 1 || logits.numel() == 0) throw DimensionError("argmax needs a non-empty class axis");
  const auto k = logits.dim(0), v = logits.numel() / k;
  const auto d = logits.data();
  Labels out(static_cast<std::size_t>(v), 0);
  std::vector<T> best(d.begin(), d.begin() + v);
  for (std::int64_t c = 1; c < k; ++c)
    for (std::int64_t i = 0; i < v; ++i) {
      if (d[c * v + i] > best[static_cast<std::size_t>(i)]) {
        best[static_cast<std::size_t>(i)] = d[c * v + i];
        out[static_cast<std::size_t>(i)] = static_cast<std::int32_t>(c);
      }
    }
  return out;
}

#define SMT_INST(T)                                                                                          \
  template Tensor<T> gaussian_importance_map<T>(std::int64_t, double);                                      \
  template Tensor<T> sliding_window_infer(const Tensor<T>&, const TileFn<T>&, const SlidingWindowConfig&);  \
  template Tensor<T> sliding_window_infer(const Tensor<T>&, const SwinSMT<T>&, const SlidingWindowConfig&); \
  template Labels argmax_labels(const Tensor<T>&);
SMT_INSTANTIATE_FLOAT_TYPES(SMT_INST)
#undef SMT_INST

}  // namespace smt
