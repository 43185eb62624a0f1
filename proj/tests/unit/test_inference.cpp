// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "smt/inference.hpp"
#include "test_util.hpp"

using namespace smt;
using smt::test::rand64;
using T64 = Tensor<double>;

TEST_CASE("gaussian importance map: peak, symmetry, closed form, floor") {
  auto odd = gaussian_importance_map<double>(9, 0.125);
  const auto d = odd.data();
  CHECK(d[4 * 81 + 4 * 9 + 4] == 1.0);
  CHECK(*std::max_element(d.begin(), d.end()) == 1.0);

  const std::int64_t r = 32;
  auto g = gaussian_importance_map<double>(r, 0.125);
  REQUIRE(g.shape() == Shape{r, r, r});
  auto at = [&](std::int64_t z, std::int64_t y, std::int64_t x) { return g.data()[(z * r + y) * r + x]; };
  CHECK(at(15, 16, 15) == 1.0);
  CHECK(at(16, 16, 16) == 1.0);
  bool symmetric = true;
  for (std::int64_t z = 0; z < r; ++z)
    for (std::int64_t y = 0; y < r; ++y)
      for (std::int64_t x = 0; x < r; ++x) {
        const double v = at(z, y, x);
        symmetric = symmetric && v == at(r - 1 - z, y, x) && v == at(z, r - 1 - y, x) && v == at(z, y, r - 1 - x);
      }
  CHECK(symmetric);

  // sigma = 4 voxels, centre 15.5; each axis is divided by its own peak.
  auto oracle = [](double dz, double dy, double dx) {
    const double s2 = 2.0 * 16.0;
    return std::exp(-(dz * dz - 0.25) / s2) * std::exp(-(dy * dy - 0.25) / s2) * std::exp(-(dx * dx - 0.25) / s2);
  };
  CHECK(at(15, 15, 5) / at(15, 15, 15) == doctest::Approx(oracle(0.5, 0.5, 10.5)).epsilon(1e-12));
  CHECK(at(10, 12, 20) == doctest::Approx(oracle(5.5, 3.5, 4.5)).epsilon(1e-12));
  CHECK(oracle(15.5, 15.5, 15.5) < kImportanceFloor);
  CHECK(at(0, 0, 0) / at(16, 16, 16) == kImportanceFloor);
  CHECK(*std::min_element(g.data().begin(), g.data().end()) == kImportanceFloor);

  CHECK_THROWS_AS(gaussian_importance_map<float>(0, 0.125), ConfigError);
  CHECK_THROWS_AS(gaussian_importance_map<float>(8, 0.0), ConfigError);
}

TEST_CASE("tile starts and origins") {
  CHECK(tile_starts(64, 32, 0.5) == std::vector<std::int64_t>{0, 16, 32});
  CHECK(tile_starts(32, 32, 0.5) == std::vector<std::int64_t>{0});
  CHECK(tile_starts(70, 32, 0.5) == std::vector<std::int64_t>{0, 16, 32, 38});
  CHECK(tile_starts(64, 32, 0.0) == std::vector<std::int64_t>{0, 32});
  CHECK(tile_rois({32, 32, 32}, 32, 0.5) == std::vector<Origin3>{{0, 0, 0}});
  CHECK(tile_rois({10, 40, 32}, 32, 0.5) == std::vector<Origin3>{{0, 0, 0}, {0, 8, 0}});
  CHECK(roi_padding({10, 40, 31}, 32) == Origin3{11, 0, 0});
  CHECK_THROWS_AS(tile_starts(10, 32, 0.5), ConfigError);
}

TEST_CASE("tiles cover every voxel for random shapes") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t r = 4 + static_cast<std::int64_t>(rng() % 13);
    const double overlap = std::uniform_real_distribution<double>(0.0, 0.9)(rng);
    Origin3 vol;
    for (auto& s : vol) s = 1 + static_cast<std::int64_t>(rng() % 48);
    const auto tiles = tile_rois(vol, r, overlap);
    Origin3 full;
    for (int a = 0; a < 3; ++a) full[a] = std::max(vol[a], r);
    std::vector<int> hits(static_cast<std::size_t>(full[0] * full[1] * full[2]), 0);
    bool inside = true;
    for (const auto& o : tiles) {
      for (int a = 0; a < 3; ++a) inside = inside && o[a] >= 0 && o[a] + r <= full[a];
      for (std::int64_t z = o[0]; z < o[0] + r; ++z)
        for (std::int64_t y = o[1]; y < o[1] + r; ++y)
          for (std::int64_t x = o[2]; x < o[2] + r; ++x) ++hits[static_cast<std::size_t>((z * full[1] + y) * full[2] + x)];
    }
    INFO("trial " << trial << " roi " << r << " overlap " << overlap);
    CHECK(inside);
    CHECK(std::is_sorted(tiles.begin(), tiles.end()));
    CHECK(std::adjacent_find(tiles.begin(), tiles.end()) == tiles.end());
    CHECK(*std::min_element(hits.begin(), hits.end()) >= 1);
  }
}

TEST_CASE("shifting by one stride shifts interior origins") {
  for (std::int64_t len : {40, 64, 77, 100}) {
    const std::int64_t r = 32, stride = 16;
    const auto a = tile_starts(len, r, 0.5);
    const auto b = tile_starts(len + stride, r, 0.5);
    REQUIRE(b.size() == a.size() + 1);
    CHECK(b[0] == 0);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i + 1] == a[i] + stride);
  }
}

TEST_CASE("single tile equals the direct forward") {
  SwinSMT<float> model(SwinSMTConfig::tiny(), 3);
  std::mt19937_64 rng(4);
  auto x = Tensor<float>::randn({1, 32, 32, 32}, rng);
  SlidingWindowConfig cfg;
  cfg.roi = 32;
  auto direct = model.forward(x);
  auto tiled = sliding_window_infer(x, model, cfg);
  REQUIRE(tiled.shape() == direct.shape());
  CHECK(std::equal(tiled.data().begin(), tiled.data().end(), direct.data().begin()));

  cfg.roi = 64;
  CHECK_THROWS_AS(sliding_window_infer(x, model, cfg), ConfigError);
  cfg.roi = 32;
  cfg.overlap = 1.0;
  CHECK_THROWS_AS(sliding_window_infer(x, model, cfg), ConfigError);
}

TEST_CASE("constant and identity tile models blend back exactly") {
  std::mt19937_64 rng(5);
  SlidingWindowConfig cfg;
  cfg.roi = 8;
  auto vol = Tensor<float>::randn({2, 13, 20, 6}, rng);
  const float c0 = 0.3f, c1 = -7.1f;
  auto constant = [&](const Tensor<float>&) {
    Tensor<float> out({2, 8, 8, 8}, c0);
    std::fill(out.mutable_data().begin() + 512, out.mutable_data().end(), c1);
    return out;
  };
  auto y = sliding_window_infer<float>(vol, constant, cfg);
  REQUIRE(y.shape() == Shape{2, 13, 20, 6});
  for (std::int64_t i = 0; i < y.numel(); ++i) REQUIRE(y.data()[i] == (i < y.numel() / 2 ? c0 : c1));

  // Tiles agree on every voxel, so blending must return the input, padding included.
  auto ident = sliding_window_infer<float>(vol, [](const Tensor<float>& t) { return t; }, cfg);
  CHECK(std::equal(ident.data().begin(), ident.data().end(), vol.data().begin()));
  cfg.mode = BlendMode::constant;
  auto ident64 = sliding_window_infer<double>(vol.cast<double>(), [](const T64& t) { return t; }, cfg);
  CHECK(std::equal(ident64.data().begin(), ident64.data().end(), vol.cast<double>().data().begin()));
}

TEST_CASE("two tiles along one axis match a hand-blended oracle") {
  std::mt19937_64 rng(6);
  const std::int64_t r = 8, len = 12;
  auto vol = rand64({1, r, r, len}, rng);
  // Output depends on the position inside the tile, so overlapping tiles disagree.
  auto fn = [&](const T64& t) {
    T64 out({1, r, r, r});
    for (std::int64_t i = 0; i < r * r * r; ++i) out.mutable_data()[i] = t.data()[i] + 0.1 * static_cast<double>(i % r);
    return out;
  };
  SlidingWindowConfig cfg;
  cfg.roi = r;
  REQUIRE(tile_rois({r, r, len}, r, 0.5) == std::vector<Origin3>{{0, 0, 0}, {0, 0, 4}});
  auto y = sliding_window_infer<double>(vol, fn, cfg);

  const double sigma = 0.125 * r, centre = 3.5;
  auto w = [&](std::int64_t i) {
    const double d = static_cast<double>(i) - centre;
    return std::exp(-(d * d - 0.25) / (2 * sigma * sigma));
  };
  double worst = 0;
  for (std::int64_t z = 0; z < r; ++z)
    for (std::int64_t yy = 0; yy < r; ++yy) {
      const double wyz = w(z) * w(yy);
      for (std::int64_t x = 0; x < len; ++x) {
        const double v = vol.data()[(z * r + yy) * len + x];
        double num = 0, den = 0;
        for (std::int64_t start : {0, 4}) {
          const auto lx = x - start;
          if (lx < 0 || lx >= r) continue;
          const double wt = std::max(wyz * w(lx), kImportanceFloor);
          num += wt * (v + 0.1 * static_cast<double>(lx));
          den += wt;
        }
        worst = std::max(worst, std::abs(num / den - y.data()[(z * r + yy) * len + x]));
      }
    }
  CHECK(worst <= 1e-6);
}

TEST_CASE("blended logits stay within the contributing tile values") {
  std::mt19937_64 rng(7);
  const std::int64_t r = 6;
  const Origin3 side{9, 7, 14};
  std::vector<T64> outs;
  auto fn = [&](const T64&) {
    outs.push_back(rand64({2, r, r, r}, rng, 3.0));
    return outs.back();
  };
  SlidingWindowConfig cfg;
  cfg.roi = r;
  auto y = sliding_window_infer<double>(rand64({1, side[0], side[1], side[2]}, rng), fn, cfg);
  const auto tiles = tile_rois(side, r, cfg.overlap);
  REQUIRE(tiles.size() == outs.size());
  const auto vox = side[0] * side[1] * side[2];
  std::vector<double> lo(static_cast<std::size_t>(2 * vox), INFINITY), hi(lo.size(), -INFINITY);
  for (std::size_t t = 0; t < tiles.size(); ++t)
    for (std::int64_t c = 0; c < 2; ++c)
      for (std::int64_t z = 0; z < r; ++z)
        for (std::int64_t yy = 0; yy < r; ++yy)
          for (std::int64_t x = 0; x < r; ++x) {
            const auto v = c * vox + ((tiles[t][0] + z) * side[1] + tiles[t][1] + yy) * side[2] + tiles[t][2] + x;
            const double val = outs[t].data()[((c * r + z) * r + yy) * r + x];
            lo[static_cast<std::size_t>(v)] = std::min(lo[static_cast<std::size_t>(v)], val);
            hi[static_cast<std::size_t>(v)] = std::max(hi[static_cast<std::size_t>(v)], val);
          }
  bool convex = true;
  for (std::int64_t i = 0; i < 2 * vox; ++i) {
    convex = convex && y.data()[i] >= lo[static_cast<std::size_t>(i)] && y.data()[i] <= hi[static_cast<std::size_t>(i)];
  }
  CHECK(convex);
}

TEST_CASE("padding keeps the label volume shape") {
  SwinSMT<float> model(SwinSMTConfig::tiny(), 8);
  std::mt19937_64 rng(8);
  auto x = Tensor<float>::randn({1, 20, 33, 10}, rng);
  SlidingWindowConfig cfg;
  cfg.roi = 32;
  auto y = sliding_window_infer(x, model, cfg);
  CHECK(y.shape() == Shape{3, 20, 33, 10});
  CHECK(argmax_labels(y).size() == static_cast<std::size_t>(20 * 33 * 10));
}

TEST_CASE("argmax labels") {
  T64 zeros({4, 3, 2});
  CHECK(argmax_labels(zeros) == Labels(6, 0));

  T64 onehot({3, 4});
  const Labels want{2, 0, 1, 2};
  for (std::int64_t v = 0; v < 4; ++v) onehot.mutable_data()[want[static_cast<std::size_t>(v)] * 4 + v] = 1.0;
  CHECK(argmax_labels(onehot) == want);

  T64 tie({3, 1}, std::vector<double>{0.5, 2.0, 2.0});
  CHECK(argmax_labels(tie) == Labels{1});

  std::mt19937_64 rng(9);
  auto x = rand64({5, 7, 3}, rng);
  Labels oracle(21);
  for (std::int64_t v = 0; v < 21; ++v) {
    int best = 0;
    for (int c = 1; c < 5; ++c)
      if (x.data()[c * 21 + v] > x.data()[best * 21 + v]) best = c;
    oracle[static_cast<std::size_t>(v)] = best;
  }
  CHECK(argmax_labels(x) == oracle);
  CHECK(argmax_labels(x.cast<float>()) == oracle);
}
