// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "smt/gradcheck.hpp"
#include "smt/losses.hpp"
#include "smt/ops.hpp"
#include "test_util.hpp"

using namespace smt;
using smt::test::rand64;
using T64 = Tensor<double>;

namespace {

// Logits that put (numerically) all mass on the given labels.
T64 hard_logits(const Labels& labels, std::int64_t classes, double margin = 60.0) {
  const auto v = static_cast<std::int64_t>(labels.size());
  T64 out({classes, v}, 0.0);
  for (std::int64_t i = 0; i < v; ++i) out.mutable_data()[labels[i] * v + i] = margin;
  return out;
}

double dice_oracle(const T64& logits, const Labels& labels, double eps, bool background) {
  const auto k = logits.dim(0), v = logits.numel() / k;
  std::vector<double> p(static_cast<std::size_t>(k * v));
  for (std::int64_t i = 0; i < v; ++i) {
    double z = 0;
    for (std::int64_t c = 0; c < k; ++c) z += std::exp(logits.data()[c * v + i]);
    for (std::int64_t c = 0; c < k; ++c) p[c * v + i] = std::exp(logits.data()[c * v + i]) / z;
  }
  double acc = 0;
  int n = 0;
  for (std::int64_t c = background ? 0 : 1; c < k; ++c, ++n) {
    double inter = 0, ps = 0, ys = 0;
    for (std::int64_t i = 0; i < v; ++i) {
      const double y = labels[i] == c ? 1.0 : 0.0;
      inter += p[c * v + i] * y;
      ps += p[c * v + i];
      ys += y;
    }
    acc += (2 * inter + eps) / (ps + ys + eps);
  }
  return 1.0 - acc / n;
}

double ce_oracle(const T64& logits, const Labels& labels) {
  const auto k = logits.dim(0), v = logits.numel() / k;
  double acc = 0;
  for (std::int64_t i = 0; i < v; ++i) {
    double mx = -INFINITY;
    for (std::int64_t c = 0; c < k; ++c) mx = std::max(mx, logits.data()[c * v + i]);
    double z = 0;
    for (std::int64_t c = 0; c < k; ++c) z += std::exp(logits.data()[c * v + i] - mx);
    acc -= logits.data()[labels[i] * v + i] - mx - std::log(z);
  }
  return acc / static_cast<double>(v);
}

Labels random_labels(std::int64_t n, int classes, std::mt19937_64& rng) {
  Labels l(static_cast<std::size_t>(n));
  for (auto& v : l) v = static_cast<std::int32_t>(rng() % static_cast<std::uint64_t>(classes));
  return l;
}

}  // namespace

TEST_CASE("soft_dice_loss: perfect, half overlap, oracle") {
  std::mt19937_64 rng(1);
  auto labels = random_labels(64, 4, rng);
  CHECK(soft_dice_loss(hard_logits(labels, 4), labels).item() <= 1e-6);

  // Prediction and truth: equal 8-voxel foregrounds sharing 4 voxels.
  Labels truth(32, 0), pred(32, 0);
  for (int i = 0; i < 8; ++i) truth[i] = 1;
  for (int i = 4; i < 12; ++i) pred[i] = 1;
  CHECK(soft_dice_loss(hard_logits(pred, 2), truth).item() == doctest::Approx(0.5).epsilon(1e-5));

  for (int trial = 0; trial < 10; ++trial) {
    const int k = 2 + trial % 4;
    auto x = rand64({k, 3, 4, 2}, rng, 2.0);
    auto l = random_labels(24, k, rng);
    for (bool bg : {false, true}) {
      LossConfig cfg;
      cfg.include_background_in_dice = bg;
      CHECK(std::abs(soft_dice_loss(x, l, cfg).item() - dice_oracle(x, l, cfg.dice_eps, bg)) <= 1e-6);
    }
    const double loss = soft_dice_loss(x, l).item();
    CHECK(loss >= 0.0);
    CHECK(loss <= 1.0);
  }
  Labels bad{0, 1, 5};
  CHECK_THROWS_AS(soft_dice_loss(rand64({3, 3}, rng), bad), DataError);
  Labels neg{0, -1, 1};
  CHECK_THROWS_AS(cross_entropy_loss(rand64({3, 3}, rng), neg), DataError);
  CHECK_THROWS_AS(soft_dice_loss(rand64({3, 4}, rng), Labels{0, 1}), DimensionError);
}

TEST_CASE("cross_entropy_loss: uniform, limit, oracle, stability") {
  std::mt19937_64 rng(2);
  auto labels = random_labels(30, 5, rng);
  CHECK(cross_entropy_loss(T64({5, 30}, 0.0), labels).item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  CHECK(cross_entropy_loss(hard_logits(labels, 5, 40.0), labels).item() <= 1e-15);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = rand64({4, 2, 3, 3}, rng, 3.0);
    auto l = random_labels(18, 4, rng);
    CHECK(std::abs(cross_entropy_loss(x, l).item() - ce_oracle(x, l)) <= 1e-9);
  }
  for (double mag : {1e2, 1e3, 1e4}) {
    auto big = scale(rand64({3, 10}, rng), mag);
    auto l = random_labels(10, 3, rng);
    const double v32 = cross_entropy_loss(big.cast<float>(), l).item();
    const double v64 = cross_entropy_loss(big, l).item();
    CHECK(std::isfinite(v32));
    CHECK(std::isfinite(v64));
    CHECK(std::abs(v64 - ce_oracle(big, l)) <= 1e-9 * std::max(1.0, v64));
  }
}

TEST_CASE("combined_loss: definition, degenerate weight, linearity") {
  std::mt19937_64 rng(3);
  auto x = rand64({3, 4, 4, 4}, rng);
  auto l = random_labels(64, 3, rng);
  LossConfig def;
  CHECK(def.lambda == 1.0);
  auto t = combined_loss(x, l);
  CHECK(t.total.item() == doctest::Approx(t.dice.item() + t.ce.item()).epsilon(1e-14));
  CHECK(t.dice.item() == soft_dice_loss(x, l).item());
  CHECK(t.ce.item() == cross_entropy_loss(x, l).item());

  LossConfig zero;
  zero.lambda = 0.0;
  CHECK(combined_loss(x, l, zero).total.item() == soft_dice_loss(x, l).item());
  LossConfig two;
  two.lambda = 2.0;
  CHECK(combined_loss(x, l, two).total.item() - t.total.item() == doctest::Approx(t.ce.item()).epsilon(1e-12));

  LossConfig bad;
  bad.lambda = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.dice_eps = 0;
  CHECK_THROWS_AS(combined_loss(x, l, bad), ConfigError);
}

TEST_CASE("combined_loss gradient matches finite differences") {
  for (int trial = 0; trial < 4; ++trial) {
    std::mt19937_64 rng(40 + static_cast<std::uint64_t>(trial));
    auto x = rand64({3, 2, 3, 2}, rng, 1.5);
    auto l = random_labels(12, 3, rng);
    LossConfig cfg;
    cfg.lambda = 0.5 + trial * 0.25;
    cfg.include_background_in_dice = trial % 2 == 1;
    const double err = finite_diff_check([&] { return combined_loss(x, l, cfg).total; }, {x});
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("dsc_metric: identical, disjoint, half overlap, absent classes") {
  Labels a(40, 0), b(40, 0);
  for (int i = 0; i < 10; ++i) a[i] = 1;
  for (int i = 20; i < 30; ++i) a[i] = 2;
  auto same = dsc_metric(a, a, {1, 2, 3});
  CHECK(same.per_class[0].value() == 100.0);
  CHECK(same.per_class[1].value() == 100.0);
  CHECK_FALSE(same.per_class[2].has_value());
  CHECK(same.scored == 2);
  CHECK(same.mean == 100.0);

  for (int i = 10; i < 20; ++i) b[i] = 1;
  CHECK(dsc_metric(a, b, {1}).mean == 0.0);

  Labels half(40, 0);
  for (int i = 5; i < 15; ++i) half[i] = 1;
  CHECK(dsc_metric(half, a, {1}).mean == 50.0);
  CHECK(std::isnan(dsc_metric(Labels(5, 0), Labels(5, 0), {1}).mean));
  CHECK_THROWS_AS(dsc_metric(a, Labels(3, 0), {1}), DimensionError);
  CHECK(foreground_classes(4) == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("soft Dice agrees with DSC in the hard-label limit") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    const int k = 4;
    Labels truth(200), pred(200);
    for (std::size_t i = 0; i < truth.size(); ++i) {
      truth[i] = static_cast<std::int32_t>(1 + rng() % 3);
      pred[i] = rng() % 4 == 0 ? static_cast<std::int32_t>(rng() % 4) : truth[i];
    }
    const double loss = soft_dice_loss(hard_logits(pred, k), truth).item();
    const auto dsc = dsc_metric(pred, truth, foreground_classes(k - 1));
    CHECK(std::abs((1.0 - loss) - dsc.mean / 100.0) <= 1e-4);
  }
}
