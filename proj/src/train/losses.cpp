// SPDX-License-Identifier: Apache-2.0
#include "smt/losses.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "smt/ops.hpp"
#include "../tensor/graph.hpp"

namespace smt {

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("loss lambda must be >= 0");
  if (!(dice_eps > 0.0)) throw ConfigError("dice smoothing must be > 0");
}

namespace {

template <typename T>
std::pair<std::int64_t, std::int64_t> check_labels(const Tensor<T>& logits, const Labels& labels) {
  if (logits.ndim() < 2) throw DimensionError("segmentation logits need a class axis, got " + shape_str(logits.shape()));
  const auto classes = logits.dim(0);
  const auto voxels = logits.numel() / classes;
  if (static_cast<std::int64_t>(labels.size()) != voxels) {
    throw DimensionError("label volume has " + std::to_string(labels.size()) + " voxels, logits " +
                         shape_str(logits.shape()));
  }
  for (auto l : labels) {
    if (l < 0 || l >= classes) {
      throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(classes - 1) + "]");
    }
  }
  return {classes, voxels};
}

}  // namespace

template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& logits, const Labels& labels, const LossConfig& cfg) {
  cfg.validate();
  const auto [classes, voxels] = check_labels(logits, labels);
  std::vector<T> onehot(static_cast<std::size_t>(classes * voxels), T(0));
  for (std::int64_t v = 0; v < voxels; ++v) onehot[static_cast<std::size_t>(labels[v] * voxels + v)] = T(1);
  const auto first = cfg.include_background_in_dice ? 0 : 1;
  const auto used = classes - first;
  if (used < 1) throw ConfigError("Dice loss needs at least one scored class");

  auto probs = slice(softmax(reshape(logits, {classes, voxels}), 0), 0, first, used);
  Tensor<T> truth({classes, voxels}, std::move(onehot));
  truth = slice(truth, 0, first, used);
  const auto eps = static_cast<T>(cfg.dice_eps);
  auto inter = sum(mul(probs, truth), 1);
  auto denom = add_scalar(add(sum(probs, 1), sum(truth, 1)), eps);
  auto dice = div(add_scalar(scale(inter, T(2)), eps), denom);
  return add_scalar(neg(mean(dice)), T(1));
}

template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, const Labels& labels) {
  const auto [classes, voxels] = check_labels(logits, labels);
  Index pick(static_cast<std::size_t>(voxels));
  for (std::int64_t v = 0; v < voxels; ++v) pick[static_cast<std::size_t>(v)] = labels[v] * voxels + v;
  auto logp = log_softmax(reshape(logits, {classes, voxels}), 0);
  return neg(mean(gather(logp, pick, {voxels})));
}

template <typename T>
LossTerms<T> combined_loss(const Tensor<T>& logits, const Labels& labels, const LossConfig& cfg) {
  LossTerms<T> t;
  t.dice = soft_dice_loss(logits, labels, cfg);
  t.ce = cross_entropy_loss(logits, labels);
  t.total = add(t.dice, scale(t.ce, static_cast<T>(cfg.lambda)));
  return t;
}

DscReport dsc_metric(const Labels& pred, const Labels& truth, const std::vector<int>& classes) {
  if (pred.size() != truth.size()) {
    throw DimensionError("DSC volumes differ in size: " + std::to_string(pred.size()) + " vs " +
                         std::to_string(truth.size()));
  }
  DscReport r;
  r.classes = classes;
  double acc = 0;
  for (int c : classes) {
    std::int64_t p = 0, t = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const bool a = pred[i] == c, b = truth[i] == c;
      p += a;
      t += b;
      both += a && b;
    }
    if (p + t == 0) {
      r.per_class.emplace_back(std::nullopt);
      continue;
    }
    const double dsc = 200.0 * static_cast<double>(both) / static_cast<double>(p + t);
    r.per_class.emplace_back(dsc);
    acc += dsc;
    ++r.scored;
  }
  r.mean = r.scored ? acc / r.scored : std::numeric_limits<double>::quiet_NaN();
  return r;
}

std::vector<int> foreground_classes(int num_classes) {
  std::vector<int> c;
  for (int k = 1; k <= num_classes; ++k) c.push_back(k);
  return c;
}

#define SMT_INST(T)                                                                        \
  template Tensor<T> soft_dice_loss(const Tensor<T>&, const Labels&, const LossConfig&);  \
  template Tensor<T> cross_entropy_loss(const Tensor<T>&, const Labels&);                 \
  template LossTerms<T> combined_loss(const Tensor<T>&, const Labels&, const LossConfig&);
SMT_INSTANTIATE_FLOAT_TYPES(SMT_INST)
#undef SMT_INST

}  // namespace smt
