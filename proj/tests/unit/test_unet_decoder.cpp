// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "smt/gradcheck.hpp"
#include "smt/losses.hpp"
#include "smt/model.hpp"
#include "test_util.hpp"

using namespace smt;
using smt::test::max_abs_diff;
using smt::test::rand64;
using T64 = Tensor<double>;

TEST_CASE("model output matches the input ROI") {
  auto cfg = SwinSMTConfig::toy();
  SwinSMT<float> model(cfg, 3);
  std::mt19937_64 rng(1);
  auto y = model.forward(Tensor<float>::randn({1, 32, 32, 32}, rng));
  CHECK(y.shape() == Shape{5, 32, 32, 32});

  auto wide = cfg;
  wide.num_classes = 117;
  wide.experts = {0, 0, 0, 0};
  wide.depths = {1, 1, 1, 1};
  SwinSMT<float> m117(wide, 4);
  CHECK(m117.forward(Tensor<float>::randn({1, 32, 32, 32}, rng)).dim(0) == 118);
  CHECK(SwinSMTConfig::full().out_channels() == 118);

  auto big = SwinSMTConfig::tiny();
  big.patch_size = 64;
  big.in_channels = 2;
  SwinSMT<float> m64(big, 5);
  CHECK(m64.forward(Tensor<float>::randn({2, 64, 64, 64}, rng)).shape() == Shape{3, 64, 64, 64});
}

TEST_CASE("zeroed head gives all-zero logits") {
  SwinSMT<float> model(SwinSMTConfig::tiny(), 6);
  auto& head = model.decoder().head;
  head.weight = Tensor<float>::zeros(head.weight.shape());
  head.bias = Tensor<float>::zeros(head.bias.shape());
  std::mt19937_64 rng(2);
  auto y = model.forward(Tensor<float>::randn({1, 32, 32, 32}, rng));
  for (float v : y.data()) CHECK(v == 0.0f);
}

TEST_CASE("segmentation_head is a 1x1x1 conv") {
  std::mt19937_64 rng(3);
  ConvParams<double> id;
  id.weight = T64({1, 1, 1, 1, 1}, 1.0);
  auto x = rand64({1, 3, 4, 2}, rng);
  CHECK(max_abs_diff(segmentation_head(x, id).data(), x.data()) == 0.0);

  auto head = ConvParams<double>::init(5, 3, 1, true, rng);
  auto f = rand64({3, 8, 8, 8}, rng);
  auto y = segmentation_head(f, head);
  REQUIRE(y.shape() == Shape{5, 8, 8, 8});
  double worst = 0;
  for (std::int64_t k = 0; k < 5; ++k)
    for (std::int64_t v = 0; v < 512; ++v) {
      double acc = head.bias.data()[k];
      for (std::int64_t c = 0; c < 3; ++c) acc += head.weight.data()[k * 3 + c] * f.data()[c * 512 + v];
      worst = std::max(worst, std::abs(acc - y.data()[k * 512 + v]));
    }
  CHECK(worst <= 1e-12);

  auto k3 = ConvParams<double>::init(5, 3, 3, true, rng);
  CHECK_THROWS_AS(segmentation_head(f, k3), ConfigError);
}

TEST_CASE("decoder rejects an inconsistent pyramid") {
  SwinSMT<double> model(SwinSMTConfig::tiny(), 7);
  std::mt19937_64 rng(4);
  auto x = rand64({1, 32, 32, 32}, rng);
  auto f = model.encoder().forward(x);
  auto bad = f;
  bad.maps[2] = rand64({3, 4, 4, 4}, rng);
  CHECK_THROWS_AS(decoder_forward(x, bad, model.decoder()), ConfigError);
  bad = f;
  bad.maps[4] = T64{};
  CHECK_THROWS_AS(decoder_forward(x, bad, model.decoder()), ConfigError);
  CHECK(decoder_forward(x, f, model.decoder()).shape() == Shape{3, 32, 32, 32});
}

TEST_CASE("residual blocks carry a shortcut only when widths differ") {
  std::mt19937_64 rng(5);
  CHECK(ResBlockParams<float>::init(3, 4, rng).shortcut.has_value());
  CHECK_FALSE(ResBlockParams<float>::init(4, 4, rng).shortcut.has_value());
  auto up = UpBlockParams<float>::init(8, 4, rng);
  CHECK(up.up.weight.shape() == Shape{8, 4, 2, 2, 2});
  CHECK(up.block.conv1.weight.shape() == Shape{4, 8, 3, 3, 3});
}

TEST_CASE("parameter count: hand count, analytic vs counted") {
  SwinSMTConfig c;
  c.in_channels = 1;
  c.patch_size = 32;
  c.embed_dim = 2;
  c.depths = {1, 0, 0, 0};
  c.num_heads = {1, 1, 1, 1};
  c.window_size = 2;
  c.experts = {0, 2, 2, 2};
  c.num_classes = 1;
  const auto b = param_count(c);
  CHECK(b.part("stem") == 18);
  CHECK(b.part("stage1") == 197);
  CHECK(b.part("stage2") == 320);
  CHECK(b.part("stage3") == 1152);
  CHECK(b.part("stage4") == 4352);
  CHECK(b.part("decoder") == 94026);
  CHECK(b.total == 100065);
  CHECK(b.moe_layers == 0);
  SwinSMT<float> hand(c, 1);
  CHECK(hand.num_parameters() == 100065);

  for (auto cfg : {SwinSMTConfig::toy(), SwinSMTConfig::tiny()}) {
    for (bool norm : {false, true}) {
      cfg.moe_normalize_logits = norm;
      SwinSMT<float> m(cfg, 2);
      CHECK(m.num_parameters() == param_count(cfg).total);
    }
  }
}

TEST_CASE("parameter count is affine in the expert count") {
  auto cfg = SwinSMTConfig::toy();
  cfg.patch_size = 64;
  std::int64_t slope = 0, layers = 0;
  for (int s = 2; s <= kNumStages; ++s) {
    slope += cfg.depths[static_cast<std::size_t>(s - 1)] * expert_params_at_stage(cfg, s);
    layers += cfg.depths[static_cast<std::size_t>(s - 1)];
  }
  cfg.experts = {0, 1, 1, 1};
  const auto base = param_count(cfg).total;
  for (std::int64_t n : {1, 2, 4, 8, 16, 32}) {
    cfg.experts = {0, n, n, n};
    const auto b = param_count(cfg);
    CHECK(b.total - base == (n - 1) * slope);
    CHECK(b.moe_layers == layers);
  }
  // Full-size reference profile, reported for comparison with the published ~170.8M.
  const auto full = param_count(SwinSMTConfig::full());
  MESSAGE("full profile parameters: " << full.total);
  CHECK(full.total > 150'000'000);
  CHECK(full.total < 190'000'000);
}

TEST_CASE("Soft MoE memory terms") {
  const auto terms = moe_memory_estimate(SwinSMTConfig::full(), 32);
  REQUIRE(terms.size() == 4);
  const std::int64_t m[] = {262144, 32768, 4096, 512};
  for (int i = 0; i < 4; ++i) {
    CHECK(terms[i].tokens == m[i]);
    CHECK(terms[i].m_squared == m[i] * m[i]);
    CHECK(terms[i].md == m[i] * terms[i].dim);
    CHECK(terms[i].allowed == (i != 0));
  }
  auto wide = SwinSMTConfig::full();
  wide.embed_dim *= 2;
  const auto doubled = moe_memory_estimate(wide, 32);
  for (int i = 1; i < 4; ++i) {
    CHECK(doubled[i].nd_squared == 4 * terms[i].nd_squared);
    CHECK(doubled[i].m_squared == terms[i].m_squared);
  }
}

TEST_CASE("tiny model passes a sampled gradient check through the combined loss") {
  SwinSMT<double> model(SwinSMTConfig::tiny(), 8);
  std::mt19937_64 rng(9);
  auto x = rand64({1, 32, 32, 32}, rng);
  Labels y(32 * 32 * 32);
  for (auto& v : y) v = static_cast<std::int32_t>(rng() % 3);
  std::vector<NamedParam> params;
  for (auto& [n, t] : model.named_parameters()) params.push_back({n, t});
  GradCheckOptions opt;
  opt.max_entries_per_param = 2;
  auto report = finite_diff_check([&] { return combined_loss(model.forward(x), y).total; }, params, opt);
  INFO("worst " << report.worst_param << "[" << report.worst_index << "]");
  CHECK(report.max_relative_error <= 1e-4);
}

TEST_CASE("forward is deterministic") {
  SwinSMT<float> a(SwinSMTConfig::toy(), 11), b(SwinSMTConfig::toy(), 11);
  std::mt19937_64 rng(10);
  auto x = Tensor<float>::randn({1, 32, 32, 32}, rng);
  CHECK(max_abs_diff(a.forward(x).data(), b.forward(x).data()) == 0.0);
}
