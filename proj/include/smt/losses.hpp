// SPDX-License-Identifier: Apache-2.0
//
// Dice + cross-entropy segmentation loss and the Dice similarity metric.
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "smt/tensor.hpp"

namespace smt {

using Labels = std::vector<std::int32_t>;

struct LossConfig {
  double lambda = 1.0;     // weight of the cross-entropy term
  double dice_eps = 1e-5;  // smoothing in numerator and denominator
  bool include_background_in_dice = false;

  void validate() const;
};

// logits [K+1, V...]; labels hold one class per voxel, flattened row-major.
template <typename T> Tensor<T> soft_dice_loss(const Tensor<T>& logits, const Labels& labels, const LossConfig& cfg = {});
template <typename T> Tensor<T> cross_entropy_loss(const Tensor<T>& logits, const Labels& labels);

template <typename T>
struct LossTerms {
  Tensor<T> total, dice, ce;
};
// L = L_D + λ·L_CE
template <typename T> LossTerms<T> combined_loss(const Tensor<T>& logits, const Labels& labels, const LossConfig& cfg = {});

struct DscReport {
  std::vector<int> classes;
  std::vector<std::optional<double>> per_class;  // percent; empty when absent from both volumes
  double mean = 0.0;                             // over scored classes; NaN if none
  int scored = 0;
};

DscReport dsc_metric(const Labels& pred, const Labels& truth, const std::vector<int>& classes);
// Classes 1..K.
std::vector<int> foreground_classes(int num_classes);

}  // namespace smt
