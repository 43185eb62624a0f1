// SPDX-License-Identifier: Apache-2.0
//
// Whole-volume inference: overlapping ROI tiles blended with an importance
// map, then per-voxel argmax.
#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "smt/losses.hpp"
#include "smt/model.hpp"

namespace smt {

enum class BlendMode { gaussian, constant };

struct SlidingWindowConfig {
  std::int64_t roi = 32;
  double overlap = 0.5;
  double sigma_scale = 0.125;
  BlendMode mode = BlendMode::gaussian;

  void validate() const;
};

using Origin3 = std::array<std::int64_t, 3>;

// [roi, roi, roi], peak 1, clamped below at kImportanceFloor.
inline constexpr double kImportanceFloor = 1e-3;
template <typename T> Tensor<T> gaussian_importance_map(std::int64_t roi, double sigma_scale);

// Window starts along one axis of length >= roi.
std::vector<std::int64_t> tile_starts(std::int64_t length, std::int64_t roi, double overlap);

// Lexicographically sorted tile origins. Sides shorter than roi count as
// roi, i.e. origins refer to the zero-padded volume.
std::vector<Origin3> tile_rois(const Origin3& volume, std::int64_t roi, double overlap);

// Leading pad per axis when a side is shorter than roi (the rest goes after).
Origin3 roi_padding(const Origin3& volume, std::int64_t roi);

// Maps one [C, roi, roi, roi] tile to [K, roi, roi, roi] logits.
template <typename T> using TileFn = std::function<Tensor<T>(const Tensor<T>&)>;

// volume [C, D, H, W] -> logits [K, D, H, W]. Tiles are visited and
// accumulated in origin order, so the result does not depend on scheduling.
template <typename T>
Tensor<T> sliding_window_infer(const Tensor<T>& volume, const TileFn<T>& fn, const SlidingWindowConfig& cfg);

// Runs the model without recording gradients. ConfigError if cfg.roi differs
// from the model's patch size.
template <typename T>
Tensor<T> sliding_window_infer(const Tensor<T>& volume, const SwinSMT<T>& model, const SlidingWindowConfig& cfg);

// logits [K, ...] -> one label per voxel; ties go to the lowest class.
template <typename T> Labels argmax_labels(const Tensor<T>& logits);

}  // namespace smt
