// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>
#include <numbers>
#include <string>

#include "smt/gradcheck.hpp"
#include "smt/ops.hpp"
#include "test_util.hpp"

using namespace smt;
using smt::test::max_abs_diff;
using smt::test::rand64;
using T64 = Tensor<double>;

namespace {

// Taylor series of erf, independent of std::erf.
double erf_series(double x) {
  double term = x, total = x;
  for (int n = 1; n < 60; ++n) {
    term *= -x * x / n;
    total += term / (2 * n + 1);
  }
  return 2.0 / std::sqrt(std::numbers::pi) * total;
}

// Direct 6-deep loop correlation with zero padding.
std::vector<double> conv_oracle(const T64& x, const T64& w, const T64& b, int stride, int pad) {
  const auto cin = x.dim(0), cout = w.dim(0), k = w.dim(2);
  const auto D = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto od = (D + 2 * pad - k) / stride + 1, oh = (H + 2 * pad - k) / stride + 1,
             ow = (W + 2 * pad - k) / stride + 1;
  std::vector<double> out(cout * od * oh * ow, 0.0);
  for (int co = 0; co < cout; ++co)
    for (int z = 0; z < od; ++z)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          double acc = b.defined() ? b.data()[co] : 0.0;
          for (int ci = 0; ci < cin; ++ci)
            for (int kz = 0; kz < k; ++kz)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  const auto iz = z * stride - pad + kz, iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
                  if (iz < 0 || iy < 0 || ix < 0 || iz >= D || iy >= H || ix >= W) continue;
                  acc += x.at({ci, iz, iy, ix}) * w.at({co, ci, kz, ky, kx});
                }
          out[((co * od + z) * oh + y) * ow + xx] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("matmul: identity, hand arithmetic, triple-loop oracle") {
  std::mt19937_64 rng(1);
  auto m = rand64({3, 3}, rng);
  T64 eye({3, 3}, std::vector<double>{1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(max_abs_diff(matmul(eye, m).data(), m.data()) == 0.0);

  T64 a({2, 2}, std::vector<double>{1, 2, 3, 4});
  T64 b({2, 1}, std::vector<double>{5, 6});
  auto c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.at({0, 0}) == 17.0);
  CHECK(c.at({1, 0}) == 39.0);

  auto p = rand64({4, 3}, rng), q = rand64({3, 5}, rng);
  auto r = matmul(p, q);
  double err = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 5; ++j) {
      double acc = 0;
      for (int k = 0; k < 3; ++k) acc += p.at({i, k}) * q.at({k, j});
      err = std::max(err, std::abs(acc - r.at({i, j})));
    }
  CHECK(err <= 1e-12);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  T64 a({2, 3}), b({4, 2});
  try {
    (void)matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2, 3]") != std::string::npos);
    CHECK(msg.find("[4, 2]") != std::string::npos);
  }
}

TEST_CASE("softmax: symmetry, shift invariance, formula oracle, stability") {
  T64 c({3}, std::vector<double>{2.5, 2.5, 2.5});
  auto sc = softmax(c, 0);
  for (double v : sc.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

  std::mt19937_64 rng(2);
  auto x = rand64({4, 5}, rng, 3.0);
  auto shifted = add_scalar(x, 17.25);
  CHECK(max_abs_diff(softmax(x, 1).data(), softmax(shifted, 1).data()) <= 1e-12);

  T64 v({3}, std::vector<double>{1, 2, 3});
  auto s = softmax(v, 0);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(std::abs(s.data()[0] - std::exp(1.0) / z) <= 1e-12);
  CHECK(std::abs(s.data()[1] - std::exp(2.0) / z) <= 1e-12);
  CHECK(std::abs(s.data()[2] - std::exp(3.0) / z) <= 1e-12);

  Tensor<float> big({4}, std::vector<float>{1e4f, -1e4f, 9999.f, 0.f});
  auto sb = softmax(big, 0);
  float total = 0;
  for (float p : sb.data()) {
    CHECK(std::isfinite(p));
    CHECK(p >= 0.f);
    total += p;
  }
  CHECK(std::abs(total - 1.f) <= 1e-6f);
  CHECK_THROWS_AS((void)softmax(v, 1), DimensionError);
}

TEST_CASE("softmax: rows sum to one along any axis") {
  std::mt19937_64 rng(3);
  auto x = rand64({3, 4, 5}, rng, 5.0);
  for (int axis = 0; axis < 3; ++axis) {
    auto s = softmax(x, axis);
    auto sums = sum(s, axis);
    for (double v : sums.data()) CHECK(std::abs(v - 1.0) <= 1e-6);
  }
}

TEST_CASE("layer_norm: constant token, two-point case, formula oracle") {
  T64 g = T64::ones({2}), b = T64::zeros({2});
  T64 constant({1, 2}, std::vector<double>{4.0, 4.0});
  auto yc = layer_norm(constant, g, b);
  for (double v : yc.data()) CHECK(v == 0.0);

  T64 two({1, 2}, std::vector<double>{1.0, 3.0});
  auto y = layer_norm(two, g, b);
  CHECK(std::abs(y.data()[0] + 1.0) <= 1e-5);
  CHECK(std::abs(y.data()[1] - 1.0) <= 1e-5);

  std::mt19937_64 rng(4);
  auto x = rand64({3, 7}, rng, 2.0);
  auto gamma = rand64({7}, rng), beta = rand64({7}, rng);
  auto out = layer_norm(x, gamma, beta);
  double err = 0;
  for (int r = 0; r < 3; ++r) {
    double m = 0, var = 0;
    for (int c = 0; c < 7; ++c) m += x.at({r, c}) / 7;
    for (int c = 0; c < 7; ++c) var += (x.at({r, c}) - m) * (x.at({r, c}) - m) / 7;
    for (int c = 0; c < 7; ++c) {
      const double e = (x.at({r, c}) - m) / std::sqrt(var + 1e-5) * gamma.data()[c] + beta.data()[c];
      err = std::max(err, std::abs(e - out.at({r, c})));
    }
  }
  CHECK(err <= 1e-6);

  auto plain = layer_norm(x);
  for (int r = 0; r < 3; ++r) {
    double m = 0, var = 0;
    for (int c = 0; c < 7; ++c) m += plain.at({r, c}) / 7;
    for (int c = 0; c < 7; ++c) var += (plain.at({r, c}) - m) * (plain.at({r, c}) - m) / 7;
    CHECK(std::abs(m) <= 1e-5);
    CHECK(std::abs(var - 1.0) <= 1e-5);
  }
  CHECK_THROWS_AS((void)layer_norm(T64({3, 0})), DimensionError);
}

TEST_CASE("gelu: zero, asymptote, erf-series oracle, lower bound") {
  T64 x({3}, std::vector<double>{0.0, 10.0, 1.0});
  auto y = gelu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(std::abs(y.data()[1] - 10.0) <= 1e-6);
  CHECK(std::abs(y.data()[2] - 0.5 * (1 + erf_series(1 / std::sqrt(2.0)))) <= 1e-9);
  T64 neg({5}, std::vector<double>{-0.1, -0.5, -1, -2, -4});
  auto yn = gelu(neg);
  for (int i = 0; i < 5; ++i) CHECK(yn.data()[i] >= neg.data()[i]);
}

TEST_CASE("conv3d: pointwise identity, counting, nested-loop oracle, errors") {
  std::mt19937_64 rng(5);
  auto x = rand64({2, 3, 3, 3}, rng);
  T64 w({2, 2, 1, 1, 1}, std::vector<double>{1, 0, 0, 1});
  CHECK(max_abs_diff(conv3d(x, w, T64{}).data(), x.data()) == 0.0);

  auto ones = T64::ones({1, 2, 2, 2});
  auto k = T64::ones({1, 1, 2, 2, 2});
  auto y = conv3d(ones, k, T64{});
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == 8.0);

  auto xr = rand64({2, 4, 4, 4}, rng);
  auto wr = rand64({3, 2, 3, 3, 3}, rng);
  auto br = rand64({3}, rng);
  for (auto [stride, pad] : std::vector<std::pair<int, int>>{{1, 0}, {1, 1}, {2, 1}}) {
    auto got = conv3d(xr, wr, br, {stride, pad});
    CHECK(max_abs_diff(got.data(), conv_oracle(xr, wr, br, stride, pad)) <= 1e-6);
  }
  CHECK(conv3d(xr, wr, br, {1, 1}).shape() == Shape{3, 4, 4, 4});
  CHECK_THROWS_AS((void)conv3d(T64({1, 2, 2, 2}), T64({1, 1, 3, 3, 3}), T64{}), DimensionError);
}

TEST_CASE("conv_transpose3d: broadcast block, shape, adjoint of conv") {
  T64 v({1, 1, 1, 1}, std::vector<double>{2.5});
  auto up = conv_transpose3d(v, T64::ones({1, 1, 2, 2, 2}), T64{});
  CHECK(up.shape() == Shape{1, 2, 2, 2});
  for (double e : up.data()) CHECK(e == 2.5);

  std::mt19937_64 rng(6);
  CHECK(conv_transpose3d(rand64({3, 4, 4, 4}, rng), rand64({3, 5, 2, 2, 2}, rng), T64{}).shape() ==
        Shape{5, 8, 8, 8});

  // Adjoint identity: grad of <conv(u, w), x> w.r.t. u equals conv_transpose(x, w).
  for (auto [k, s, p] : std::vector<std::array<int, 3>>{{2, 2, 0}, {3, 2, 1}, {3, 1, 1}}) {
    auto w = rand64({4, 3, k, k, k}, rng);  // conv: 3 -> 4 channels
    auto x = rand64({4, 3, 3, 3}, rng);
    auto ct = conv_transpose3d(x, w, T64{}, {s, p});
    auto u = T64::zeros(ct.shape(), true);
    auto y = conv3d(u, w, T64{}, {s, p});
    REQUIRE(y.shape() == x.shape());
    sum(mul(y, x)).backward();
    CHECK(max_abs_diff(u.grad(), ct.data()) <= 1e-6);
  }
}

TEST_CASE("backward: sums, squares, accumulation, contract errors") {
  std::mt19937_64 rng(7);
  auto x = rand64({3, 2}, rng, 1.0, true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);
  x.zero_grad();
  sum(mul(x, x)).backward();
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(x.grad()[i] - 2 * x.data()[i]) <= 1e-15);

  // Reused input: grads add up across both uses and across calls.
  x.zero_grad();
  auto loss = add(sum(x), sum(scale(x, 3.0)));
  loss.backward();
  for (double g : x.grad()) CHECK(g == 4.0);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 5.0);

  CHECK_THROWS_AS(mul(x, x).backward(), ContractError);
  CHECK_THROWS_AS(sum(T64::ones({2})).backward(), ContractError);
}

TEST_CASE("grad tape: reverse topological replay visits each node once") {
  std::mt19937_64 rng(8);
  auto a = rand64({2, 2}, rng, 1.0, true);
  auto b = mul(a, a);
  auto c = add(b, a);
  auto d = sum(add(c, b));
  auto tape = GradTape<double>::record(d);
  CHECK(tape.size() == 5);  // a, b, c, add(c, b), d
  auto pos = [&](const Tensor<double>& t) {
    const auto& order = tape.order();
    return std::find(order.begin(), order.end(), t.impl().get()) - order.begin();
  };
  CHECK(pos(a) < pos(b));
  CHECK(pos(b) < pos(c));
  CHECK(pos(c) < pos(d));
  d.impl()->ensure_grad()[0] = 1.0;
  auto visited = tape.replay();
  CHECK(visited.size() == tape.size());
  CHECK(visited.front() == d.impl().get());
  CHECK(visited.back() == a.impl().get());
}

TEST_CASE("reshape and permute inverses are exact") {
  std::mt19937_64 rng(9);
  auto x = rand64({2, 3, 4, 5}, rng);
  auto r = reshape(reshape(x, {6, 20}), {2, 3, 4, 5});
  CHECK(max_abs_diff(r.data(), x.data()) == 0.0);
  const std::vector<int> perm{2, 0, 3, 1};
  std::vector<int> inv(4);
  for (int i = 0; i < 4; ++i) inv[perm[i]] = i;
  auto p = permute(x, perm);
  CHECK(p.shape() == Shape{4, 2, 5, 3});
  CHECK(p.at({1, 0, 2, 1}) == x.at({0, 1, 1, 2}));
  CHECK(max_abs_diff(permute(p, inv).data(), x.data()) == 0.0);
}

TEST_CASE("finite_diff_check: matmul and constant softmax sum") {
  std::mt19937_64 rng(10);
  auto A = rand64({3, 4}, rng), B = rand64({4, 2}, rng);
  CHECK(finite_diff_check([&] { return sum(matmul(A, B)); }, {A, B}) <= 1e-6);

  auto x = rand64({5}, rng);
  CHECK(finite_diff_check([&] { return sum(softmax(x, 0)); }, {x}) <= 1e-6);
  for (double g : x.grad()) CHECK(std::abs(g) <= 1e-12);
}

TEST_CASE("finite_diff_check: non-deterministic function is rejected") {
  std::mt19937_64 rng(11);
  auto x = rand64({2}, rng);
  int calls = 0;
  CHECK_THROWS_AS(finite_diff_check([&] { return scale(sum(x), static_cast<double>(++calls)); }, {x}),
                  ContractError);
}

namespace {

struct OpCase {
  std::string name;
  // Builds inputs from rng and returns (function of those inputs, inputs).
  std::function<std::pair<ScalarFn, std::vector<T64>>(std::mt19937_64&)> make;
};

// Weighted sum so that no op's gradient is trivially constant.
ScalarFn weighted(std::function<T64()> op, std::mt19937_64& rng) {
  auto probe = op();
  auto weights = rand64(probe.shape(), rng);
  return [op, weights] { return sum(mul(op(), weights)); };
}

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto unary = [&](std::string name, Shape shape, std::function<T64(const T64&)> f, double offset = 0.0) {
    cases.push_back({name, [=](std::mt19937_64& rng) {
                       auto x = add_scalar(rand64(shape, rng), offset).detach();
                       return std::pair{weighted([=] { return f(x); }, rng), std::vector<T64>{x}};
                     }});
  };
  auto binary = [&](std::string name, Shape sa, Shape sb, std::function<T64(const T64&, const T64&)> f,
                    double offset_b = 0.0) {
    cases.push_back({name, [=](std::mt19937_64& rng) {
                       auto a = rand64(sa, rng);
                       auto b = add_scalar(rand64(sb, rng, 0.3), offset_b).detach();
                       return std::pair{weighted([=] { return f(a, b); }, rng), std::vector<T64>{a, b}};
                     }});
  };
  binary("add", {3, 4}, {4}, [](auto& a, auto& b) { return add(a, b); });
  binary("sub", {2, 3}, {2, 1}, [](auto& a, auto& b) { return sub(a, b); });
  binary("mul", {2, 3, 2}, {3, 1}, [](auto& a, auto& b) { return mul(a, b); });
  binary("div", {3, 3}, {3, 3}, [](auto& a, auto& b) { return div(a, b); }, 2.0);
  binary("matmul", {2, 3, 4}, {4, 5}, [](auto& a, auto& b) { return matmul(a, b); });
  binary("matmul_batched", {2, 3, 4}, {2, 4, 2}, [](auto& a, auto& b) { return matmul(a, b); });
  unary("scale", {5}, [](auto& x) { return scale(x, 2.5); });
  unary("add_scalar", {5}, [](auto& x) { return add_scalar(x, -1.5); });
  unary("exp", {2, 3}, [](auto& x) { return exp(x); });
  unary("log", {2, 3}, [](auto& x) { return log(x); }, 4.0);
  unary("sqrt", {2, 3}, [](auto& x) { return sqrt(x); }, 4.0);
  unary("gelu", {3, 4}, [](auto& x) { return gelu(x); });
  unary("leaky_relu", {3, 4}, [](auto& x) { return leaky_relu(x, 0.01); });
  unary("sum_axis", {3, 4, 2}, [](auto& x) { return sum(x, 1); });
  unary("mean", {3, 4}, [](auto& x) { return mean(x, 0, true); });
  unary("reshape", {3, 4}, [](auto& x) { return reshape(x, {2, 6}); });
  unary("permute", {2, 3, 4}, [](auto& x) { return permute(x, {2, 0, 1}); });
  unary("transpose", {3, 5}, [](auto& x) { return transpose(x); });
  unary("slice", {4, 5}, [](auto& x) { return slice(x, 1, 1, 3); });
  unary("concat", {2, 3}, [](auto& x) { return concat<double>({x, scale(x, 2.0), x}, 1); });
  unary("gather", {6}, [](auto& x) { return gather(x, Index{5, -1, 0, 0, 3}, {5}); });
  unary("scatter", {4}, [](auto& x) { return scatter(x, Index{2, 2, -1, 0}, {3}); });
  unary("gather_rows", {4, 3}, [](auto& x) { return gather_rows(x, Index{3, -1, 1, 1}); });
  unary("scatter_rows", {4, 3}, [](auto& x) { return scatter_rows(x, Index{0, 2, -1, 2}, 3); });
  unary("softmax", {3, 4}, [](auto& x) { return softmax(x, 0); });
  unary("log_softmax", {3, 4}, [](auto& x) { return log_softmax(x, 1); });
  unary("l2_normalize", {3, 4}, [](auto& x) { return l2_normalize(x, 1); });
  unary("instance_norm", {2, 2, 2, 3}, [](auto& x) { return instance_norm(x); });
  cases.push_back({"layer_norm", [](std::mt19937_64& rng) {
                     auto x = rand64({3, 5}, rng), g = rand64({5}, rng), b = rand64({5}, rng);
                     return std::pair{weighted([=] { return layer_norm(x, g, b); }, rng), std::vector<T64>{x, g, b}};
                   }});
  for (auto [s, p] : std::vector<std::pair<int, int>>{{1, 1}, {2, 0}, {2, 1}}) {
    cases.push_back({"conv3d_s" + std::to_string(s) + "p" + std::to_string(p), [s, p](std::mt19937_64& rng) {
                       auto x = rand64({2, 4, 3, 4}, rng), w = rand64({2, 2, 2, 2, 2}, rng), b = rand64({2}, rng);
                       return std::pair{weighted([=] { return conv3d(x, w, b, {s, p}); }, rng),
                                        std::vector<T64>{x, w, b}};
                     }});
  }
  for (auto [cin, cout, s] : std::vector<std::array<int, 3>>{{3, 2, 1}, {2, 3, 1}, {3, 2, 2}}) {
    cases.push_back({"conv3d_k3_" + std::to_string(cin) + "to" + std::to_string(cout) + "_s" + std::to_string(s),
                     [cin, cout, s](std::mt19937_64& rng) {
                       auto x = rand64({cin, 4, 3, 5}, rng), w = rand64({cout, cin, 3, 3, 3}, rng);
                       return std::pair{weighted([=] { return conv3d(x, w, T64{}, {s, 1}); }, rng),
                                        std::vector<T64>{x, w}};
                     }});
  }
  cases.push_back({"conv_transpose3d", [](std::mt19937_64& rng) {
                     auto x = rand64({2, 2, 2, 3}, rng), w = rand64({2, 3, 2, 2, 2}, rng), b = rand64({3}, rng);
                     return std::pair{weighted([=] { return conv_transpose3d(x, w, b); }, rng),
                                      std::vector<T64>{x, w, b}};
                   }});
  cases.push_back({"trilinear_resize", [](std::mt19937_64& rng) {
                     auto x = rand64({2, 3, 4, 2}, rng);
                     return std::pair{weighted([=] { return trilinear_resize(x, {5, 3, 3}, {0.55, 1.3, 0.4}); }, rng),
                                      std::vector<T64>{x}};
                   }});
  return cases;
}

}  // namespace

TEST_CASE("every differentiable op passes finite differences on 20 seeded cases") {
  for (const auto& c : op_cases()) {
    double worst = 0;
    for (int seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(1000 + seed);
      auto [f, params] = c.make(rng);
      worst = std::max(worst, finite_diff_check(f, params, 1e-4));
    }
    INFO("op " << c.name << " max relative error " << worst);
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("trilinear_resize: identity step and linear ramp") {
  T64 ramp({1, 1, 1, 4}, std::vector<double>{0, 1, 2, 3});
  auto same = trilinear_resize(ramp, {1, 1, 4}, {1, 1, 1});
  CHECK(max_abs_diff(same.data(), ramp.data()) == 0.0);
  auto fine = trilinear_resize(ramp, {1, 1, 7}, {1, 1, 0.5});
  for (int i = 0; i < 7; ++i) CHECK(std::abs(fine.data()[i] - 0.5 * i) <= 1e-12);
}

TEST_CASE("no-grad mode records nothing") {
  std::mt19937_64 rng(12);
  auto x = rand64({3}, rng, 1.0, true);
  NoGradGuard guard;
  auto y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.impl()->grad_fn == nullptr);
}
