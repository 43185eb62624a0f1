// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "smt/config_io.hpp"
#include "smt/train.hpp"

using namespace smt;

namespace {

SwinSMTConfig small_model() {
  auto c = SwinSMTConfig::tiny();
  c.num_classes = 4;
  return c;
}

// One 32^3 phantom and no augmentation: every step sees the same batch.
TrainData fixed_batch_data() {
  DataConfig d;
  d.phantom_side = 32;
  d.train_count = 1;
  d.val_count = 1;
  d.test_count = 0;
  d.seed = 5;
  return make_train_data(d);
}

TrainConfig short_run(std::int64_t steps) {
  TrainConfig c;
  c.epochs = 1;
  c.steps_per_epoch = steps;
  c.lr = 3e-3;
  c.seed = 11;
  return c;
}

bool same_history(const std::vector<StepMetrics>& a, const std::vector<StepMetrics>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i];
    const auto& y = b[i];
    const bool eval_same = (std::isnan(x.eval_dsc) && std::isnan(y.eval_dsc)) || x.eval_dsc == y.eval_dsc;
    if (x.step != y.step || x.loss != y.loss || x.dice != y.dice || x.ce != y.ce || x.lr != y.lr ||
        x.grad_norm != y.grad_norm || !eval_same)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("adamw: zero gradient without decay leaves weights unchanged") {
  std::vector<Tensor<double>> p{Tensor<double>({3}, {1.0, -2.0, 0.5}, true)};
  p[0].mutable_grad();
  AdamWState<double> st;
  adamw_step(p, st, 0.1, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  CHECK(p[0].data()[0] == 1.0);
  CHECK(p[0].data()[1] == -2.0);
  CHECK(p[0].data()[2] == 0.5);
  CHECK(st.t == 1);
}

TEST_CASE("adamw: first step moves by lr against the gradient sign") {
  std::vector<Tensor<double>> p{Tensor<double>({1}, {1.0}, true)};
  p[0].mutable_grad()[0] = 1.0;
  AdamWState<double> st;
  adamw_step(p, st, 0.1, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  CHECK(p[0].data()[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(std::abs(p[0].data()[0] - 0.9) < 1e-8);
}

TEST_CASE("adamw: decay is decoupled from the gradient") {
  std::vector<Tensor<double>> p{Tensor<double>({2}, {2.0, -4.0}, true)};
  AdamWState<double> st;  // no gradient buffer at all counts as zero gradient
  adamw_step(p, st, 0.01, AdamWConfig{0.9, 0.999, 1e-8, 0.1});
  CHECK(p[0].data()[0] == 2.0 - 0.01 * 0.1 * 2.0);
  CHECK(p[0].data()[1] == -4.0 - 0.01 * 0.1 * -4.0);
}

TEST_CASE("adamw: three steps against a hand-rolled oracle") {
  std::vector<Tensor<double>> p{Tensor<double>({2}, {0.3, -0.7}, true)};
  AdamWState<double> st;
  const AdamWConfig cfg{0.8, 0.95, 1e-6, 0.05};
  const double g[3][2] = {{0.5, -1.0}, {0.25, 2.0}, {-0.75, 0.1}};
  const double lr[3] = {0.02, 0.03, 0.01};
  double w[2] = {0.3, -0.7}, m[2] = {0, 0}, v[2] = {0, 0};
  for (int t = 0; t < 3; ++t) {
    auto gr = p[0].mutable_grad();
    gr[0] = g[t][0];
    gr[1] = g[t][1];
    adamw_step(p, st, lr[t], cfg);
    for (int i = 0; i < 2; ++i) {
      w[i] *= 1.0 - lr[t] * cfg.weight_decay;
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[t][i];
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[t][i] * g[t][i];
      const double mh = m[i] / (1 - std::pow(cfg.beta1, t + 1));
      const double vh = v[i] / (1 - std::pow(cfg.beta2, t + 1));
      w[i] -= lr[t] * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
  CHECK(p[0].data()[0] == doctest::Approx(w[0]).epsilon(1e-14));
  CHECK(p[0].data()[1] == doctest::Approx(w[1]).epsilon(1e-14));
  CHECK(st.m[0].data()[0] == doctest::Approx(m[0]).epsilon(1e-14));
  CHECK(st.v[0].data()[1] == doctest::Approx(v[1]).epsilon(1e-14));
}

TEST_CASE("adamw: moment shapes must match parameters") {
  std::vector<Tensor<double>> p{Tensor<double>::zeros({2}, true)};
  AdamWState<double> st;
  st.m.push_back(Tensor<double>::zeros({3}));
  st.v.push_back(Tensor<double>::zeros({3}));
  CHECK_THROWS_AS(adamw_step(p, st, 0.1, {}), DimensionError);
}

TEST_CASE("warm-up cosine schedule landmarks") {
  TrainConfig c;  // 50 epochs x 40 steps, 5% warm-up
  const auto total = c.total_steps(), warm = c.warmup_steps();
  REQUIRE(warm == 100);
  CHECK(warmup_cosine_lr(0, total, warm, c.lr) == 0.0);
  CHECK(warmup_cosine_lr(warm, total, warm, c.lr) == 1e-4);
  CHECK(warmup_cosine_lr(warm / 2, total, warm, c.lr) == doctest::Approx(5e-5));
  CHECK(warmup_cosine_lr(warm + (total - warm) / 2, total, warm, c.lr) == doctest::Approx(5e-5).epsilon(1e-12));
  CHECK(warmup_cosine_lr(total, total, warm, c.lr) == 0.0);
  CHECK(warmup_cosine_lr(total - 1, total, warm, c.lr) < 1e-9);
  CHECK(warmup_cosine_lr(0, 10, 0, 0.5) == 0.5);
  CHECK_THROWS_AS(warmup_cosine_lr(0, 10, 10, 0.5), ConfigError);
}

TEST_CASE("warm-up cosine schedule is continuous and bounded") {
  const double base = 2e-3;
  for (std::int64_t total : {7, 40, 333, 2000}) {
    // The bound assumes the cosine phase covers at least half the schedule.
    for (double frac : {0.0, 0.05, 0.3, 0.5}) {
      const auto warm = static_cast<std::int64_t>(std::floor(frac * static_cast<double>(total)));
      const double bound = base * std::max(warm > 0 ? 1.0 / static_cast<double>(warm) : 0.0,
                                           std::numbers::pi / static_cast<double>(total));
      for (std::int64_t t = 0; t < total; ++t) {
        const double a = warmup_cosine_lr(t, total, warm, base);
        const double b = warmup_cosine_lr(t + 1, total, warm, base);
        REQUIRE(std::abs(b - a) <= bound * (1 + 1e-12));
        REQUIRE(a >= 0.0);
        REQUIRE(a <= base);
      }
    }
  }
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lr = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.warmup_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("phantom splits are disjoint and HU-scaled") {
  DataConfig d;
  d.phantom_side = 32;
  d.train_count = 2;
  d.val_count = 1;
  d.test_count = 1;
  const auto tr = make_phantoms(d, Split::train), va = make_phantoms(d, Split::val), te = make_phantoms(d, Split::test);
  REQUIRE(tr.size() == 2);
  CHECK(!(tr[0].image == va[0].image));
  CHECK(!(va[0].image == te[0].image));
  for (float x : tr[0].image.data) REQUIRE((x >= 0.0f && x <= 1.0f));
  CHECK(make_phantoms(d, Split::train)[1].image == tr[1].image);
}

TEST_CASE("zero steps leave the initial checkpoint unchanged") {
  SwinSMT<float> model(small_model(), 3);
  TrainState<float> st;
  const auto cfg = short_run(4);
  const auto before = encode_checkpoint(model, &st, &cfg);
  train_loop(model, fixed_batch_data(), cfg, st, 0);
  CHECK(st.step == 0);
  CHECK(st.history.empty());
  CHECK((encode_checkpoint(model, &st, &cfg) == before));
}

TEST_CASE("loss on a fixed batch decreases over 50 steps") {
  SwinSMT<float> model(small_model(), 3);
  TrainState<float> st;
  auto cfg = short_run(50);
  cfg.augment = false;
  cfg.warmup_fraction = 0.1;
  train_loop(model, fixed_batch_data(), cfg, st);
  REQUIRE(st.history.size() == 50);
  double first = 0, last = 0;
  for (int i = 0; i < 5; ++i) {
    first += st.history[static_cast<std::size_t>(i)].loss;
    last += st.history[static_cast<std::size_t>(45 + i)].loss;
  }
  MESSAGE("mean loss, first 5 steps: " << first / 5 << ", last 5 steps: " << last / 5);
  CHECK(last < 0.9 * first);
}

TEST_CASE("same seed gives identical history and checkpoint; resume replays the unresumed run") {
  const auto data = fixed_batch_data();
  auto cfg = short_run(6);
  cfg.eval_interval = 3;
  cfg.batch_size = 2;

  auto run = [&](std::int64_t split_at, std::vector<StepMetrics>& history) {
    SwinSMT<float> model(small_model(), 9);
    TrainState<float> st;
    train_loop(model, data, cfg, st, split_at);
    history = st.history;
    if (split_at < cfg.total_steps()) {
      const auto bytes = encode_checkpoint(model, &st, &cfg);
      SwinSMT<float> resumed(small_model(), 1234);  // different init, fully overwritten by the load
      TrainState<float> rs;
      decode_checkpoint(bytes, resumed, &rs);
      CHECK(rs.step == split_at);
      train_loop(resumed, data, cfg, rs);
      history.insert(history.end(), rs.history.begin(), rs.history.end());
      return encode_checkpoint(resumed, &rs, &cfg);
    }
    return encode_checkpoint(model, &st, &cfg);
  };

  std::vector<StepMetrics> a, b, c;
  const auto ca = run(6, a);
  const auto cb = run(6, b);
  const auto cc = run(4, c);
  REQUIRE(a.size() == 6);
  CHECK(same_history(a, b));
  CHECK((ca == cb));
  CHECK(same_history(a, c));
  CHECK((ca == cc));
  CHECK(!std::isnan(a[2].eval_dsc));
  CHECK(std::isnan(a[3].eval_dsc));
}

TEST_CASE("best hook fires on improvement") {
  SwinSMT<float> model(small_model(), 3);
  TrainState<float> st;
  auto cfg = short_run(4);
  cfg.eval_interval = 2;
  int calls = 0;
  train_loop<float>(model, fixed_batch_data(), cfg, st, -1, {}, [&](SwinSMT<float>&, const TrainState<float>& s) {
    ++calls;
    CHECK(s.best_step == s.step);
  });
  CHECK(calls >= 1);
  CHECK(st.best_step > 0);
  CHECK(!std::isnan(st.best_dsc));
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  auto data = fixed_batch_data();
  data.train[0].image.data[0] = std::numeric_limits<float>::quiet_NaN();
  SwinSMT<float> model(small_model(), 3);
  TrainState<float> st;
  auto cfg = short_run(3);
  cfg.augment = false;
  cfg.foreground_prob = 0.0;
  try {
    train_loop(model, data, cfg, st);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step 1") != std::string::npos);
    CHECK(msg.find("grad norm") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
  }
  CHECK(st.step == 0);
}

TEST_CASE("checkpoint round trip") {
  SwinSMT<float> model(small_model(), 21);
  TrainState<float> st;
  auto cfg = short_run(2);
  train_loop(model, fixed_batch_data(), cfg, st);
  const auto bytes = encode_checkpoint(model, &st, &cfg);

  SwinSMT<float> other(small_model(), 22);
  TrainState<float> st2;
  decode_checkpoint(bytes, other, &st2);
  CHECK((encode_checkpoint(other, &st2, &cfg) == bytes));
  CHECK(st2.opt.t == 2);
  CHECK(checkpoint_model_config(bytes) == small_model());

  std::mt19937_64 rng(1);
  const auto x = Tensor<float>::uniform({1, 32, 32, 32}, rng, 0.0f, 1.0f);
  NoGradGuard ng;
  const auto y1 = model.forward(x), y2 = other.forward(x);
  CHECK(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin(), y2.data().end()));

  SUBCASE("file round trip") {
    const std::string path = "test_train_harness_roundtrip.ckpt";
    save_checkpoint(path, model, &st, &cfg);
    CHECK((read_file_bytes(path) == bytes));
    SwinSMT<float> third(small_model(), 23);
    load_checkpoint(path, third);
    CHECK((encode_checkpoint(third) == encode_checkpoint(model)));
    std::remove(path.c_str());
  }
  SUBCASE("different model config") {
    auto mc = small_model();
    mc.experts = {0, 4, 4, 4};
    SwinSMT<float> wrong(mc, 1);
    CHECK_THROWS_AS(decode_checkpoint(bytes, wrong), ConfigError);
  }
  SUBCASE("shape mismatch") {
    // Swap the two axes of the first 2-D tensor; the count still matches.
    auto tampered = bytes;
    const auto pos = tampered.find("tensor encoder.stem.weight [8,4]");
    REQUIRE(pos != std::string::npos);
    tampered.replace(pos, 32, "tensor encoder.stem.weight [4,8]");
    CHECK_THROWS_AS(decode_checkpoint(tampered, other), DimensionError);
  }
  SUBCASE("damaged files") {
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3), other), FormatError);
    CHECK_THROWS_AS(decode_checkpoint("SMTCKPT 2\n" + bytes.substr(10), other), FormatError);
    CHECK_THROWS_AS(decode_checkpoint(bytes + "x", other), FormatError);
  }
}

TEST_CASE("double models store f32 payloads; save-load-save is still a fixed point") {
  SwinSMT<double> model(small_model(), 5);
  const auto first = encode_checkpoint(model);
  SwinSMT<double> loaded(small_model(), 6);
  decode_checkpoint(first, loaded);
  CHECK((encode_checkpoint(loaded) == first));
}

TEST_CASE("run config JSON: fixed point, strict keys, profiles") {
  RunConfig rc;
  rc.model.experts = {0, 8, 0, 8};
  rc.train.lr = 2e-3;
  rc.train.loss.lambda = 0.75;
  rc.data.test_count = 3;
  rc.inference.overlap = 0.25;
  const auto text = serialize_run_config(rc);
  const auto back = parse_run_config(text);
  CHECK(back == rc);
  CHECK(serialize_run_config(back) == text);
  CHECK(text.find("\"none\"") != std::string::npos);

  CHECK_THROWS_AS(parse_run_config(R"({"model": {"embed_dims": 12}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"trainer": {}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"loss": {"lambda": 1, "gamma": 2}}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"lr": "fast"}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"epochs": 1.5}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"model": {"experts": [4, 4, 4, 4]}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"model": {"profile": "full"}, "inference": {"overlap": 0.5}})"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{not json"), FormatError);

  const auto full = parse_run_config(R"({"model": {"profile": "full"}, "inference": {"roi": 128}})");
  CHECK(full.model == SwinSMTConfig::full());
  const auto tiny = parse_run_config(R"({"model": {"profile": "tiny", "experts": ["none", 2, "none", 2]}})");
  CHECK(tiny.model.experts == std::array<std::int64_t, 4>{0, 2, 0, 2});
  CHECK(tiny.model.embed_dim == 4);
  CHECK(tiny.inference.roi == 32);
}
