// SPDX-License-Identifier: Apache-2.0
#include "checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "smt/faults.hpp"
#include "smt/gradcheck.hpp"
#include "smt/inference.hpp"
#include "smt/ops.hpp"
#include "smt/train.hpp"
#include "soft_moe_oracle.hpp"

namespace smt::verify {

namespace {

using T64 = Tensor<double>;

void require(bool ok, const std::string& what) {
  if (!ok) throw CheckFailure(what);
}

std::string fmt(double x) {
  std::ostringstream s;
  s.precision(3);
  s << x;
  return s.str();
}

oracle::Mat to_mat(const T64& t) {
  const auto r = t.dim(0), c = t.dim(1);
  oracle::Mat m(static_cast<std::size_t>(r), std::vector<double>(static_cast<std::size_t>(c)));
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) m[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = t.data()[i * c + j];
  return m;
}

std::vector<double> to_vec(const T64& t) { return {t.data().begin(), t.data().end()}; }

double max_diff(const T64& t, const oracle::Mat& m) {
  const auto c = t.dim(1);
  double worst = 0;
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j)
      worst = std::max(worst, std::abs(t.data()[static_cast<std::int64_t>(i) * c + static_cast<std::int64_t>(j)] - m[i][j]));
  return worst;
}

SoftMoEParams<double> random_moe(std::int64_t m, std::int64_t d, std::int64_t n, std::mt19937_64& rng) {
  auto p = SoftMoEParams<double>::init(SoftMoEConfig::for_stage(m, d, n), rng);
  for (auto& e : p.experts) {
    e.w1 = T64::randn(e.w1.shape(), rng, 0.7, true);
    e.b1 = T64::randn(e.b1.shape(), rng, 0.3, true);
    e.w2 = T64::randn(e.w2.shape(), rng, 0.7, true);
    e.b2 = T64::randn(e.b2.shape(), rng, 0.3, true);
  }
  return p;
}

std::string softmax_normalized() {
  std::mt19937_64 rng(1);
  auto x = T64::randn({5, 7}, rng, 3.0);
  auto y = softmax(x, 1);
  double worst = 0;
  for (std::int64_t r = 0; r < 5; ++r) {
    double s = 0;
    for (std::int64_t c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  require(worst <= 1e-12, "softmax row sums deviate from 1 by " + fmt(worst));
  return "max |row sum - 1| = " + fmt(worst);
}

std::string soft_moe_oracle() {
  std::mt19937_64 rng(2024);
  double worst_out = 0, worst_sum = 0, worst_perm = 0;
  const bool det = deterministic_mode();
  for (int trial = 0; trial < 100; ++trial) {
    const std::int64_t n = std::array<std::int64_t, 3>{1, 2, 4}[static_cast<std::size_t>(trial % 3)];
    // m is a multiple of n no larger than 8, so s = m / n is an integer.
    const std::int64_t m = n * (1 + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(8 / n)));
    const std::int64_t d = 1 + static_cast<std::int64_t>(rng() % 6);
    auto p = random_moe(m, d, n, rng);
    auto x = T64::randn({m, d}, rng, 1.5);
    SoftMoETrace<double> tr;
    const auto y = soft_moe_forward(x, p, &tr);

    std::vector<oracle::Expert> experts;
    for (const auto& e : p.experts) experts.push_back({to_mat(e.w1), to_vec(e.b1), to_mat(e.w2), to_vec(e.b2)});
    const auto ref = oracle::soft_moe(to_mat(x), to_mat(p.phi), experts);
    worst_out = std::max({worst_out, max_diff(y, ref.out), max_diff(tr.dispatch, ref.dispatch), max_diff(tr.combine, ref.combine)});

    const auto cols = sum(tr.dispatch, 0), rows = sum(tr.combine, 1);
    for (double v : cols.data()) worst_sum = std::max(worst_sum, std::abs(v - 1.0));
    for (double v : rows.data()) worst_sum = std::max(worst_sum, std::abs(v - 1.0));
    for (double v : tr.dispatch.data()) require(v >= 0.0, "negative dispatch weight");
    for (double v : tr.combine.data()) require(v >= 0.0, "negative combine weight");

    Index perm(static_cast<std::size_t>(m));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto yp = soft_moe_forward(gather_rows(x, perm), p);
    const auto py = gather_rows(y, perm);
    for (std::int64_t i = 0; i < yp.numel(); ++i) worst_perm = std::max(worst_perm, std::abs(yp.data()[i] - py.data()[i]));
  }
  require(worst_out <= 1e-6, "output differs from the loop oracle by " + fmt(worst_out));
  require(worst_sum <= 1e-6, "routing weights are not distributions (max deviation " + fmt(worst_sum) + ")");
  require(worst_perm <= 1e-6, "permutation equivariance broken by " + fmt(worst_perm));
  return "100 instances: oracle " + fmt(worst_out) + ", sums " + fmt(worst_sum) + ", permutation " + fmt(worst_perm) +
         (det ? " (deterministic mode)" : "");
}

std::string soft_moe_shift_invariance() {
  std::mt19937_64 rng(3);
  auto p = random_moe(8, 4, 4, rng);
  auto x = T64::randn({8, 4}, rng);
  SoftMoETrace<double> a, b;
  soft_moe_forward(x, p, &a);
  SoftMoEOptions shifted;
  shifted.logit_offset = 37.5;
  soft_moe_forward(x, p, &b, shifted);
  double worst = 0;
  for (std::int64_t i = 0; i < a.dispatch.numel(); ++i) {
    worst = std::max(worst, std::abs(a.dispatch.data()[i] - b.dispatch.data()[i]));
    worst = std::max(worst, std::abs(a.combine.data()[i] - b.combine.data()[i]));
  }
  require(worst <= 1e-12, "a constant logit shift changed D or S by " + fmt(worst));
  return "max change " + fmt(worst);
}

std::string soft_moe_gradcheck() {
  std::mt19937_64 rng(4);
  auto p = random_moe(6, 4, 2, rng);
  auto x = T64::randn({6, 4}, rng, 1.0, true);
  auto w = T64::randn({6, 4}, rng);
  std::vector<NamedParam> params{{"x", x}};
  p.visit("moe", [&](const std::string& name, T64& t) { params.push_back({name, t}); });
  const auto r = finite_diff_check([&] { return sum(mul(soft_moe_forward(x, p), w)); }, params);
  require(r.max_relative_error <= 1e-4, "relative error " + fmt(r.max_relative_error) + " at " + r.worst_param);
  return "max relative error " + fmt(r.max_relative_error);
}

std::string soft_moe_param_affine() {
  std::vector<std::int64_t> counts;
  const std::int64_t m = 64, d = 8;
  for (std::int64_t n : {1, 2, 4, 8, 16, 32}) counts.push_back(soft_moe_param_count(SoftMoEConfig::for_stage(m, d, n)));
  // With s = m / n the router width n·s is fixed, so the count is affine in n.
  const auto slope = expert_param_count(d, 4 * d);
  const std::int64_t ns[] = {1, 2, 4, 8, 16, 32};
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const auto predicted = counts[0] + (ns[i] - 1) * slope;
    require(counts[i] == predicted, "count at n=" + std::to_string(ns[i]) + " is " + std::to_string(counts[i]) +
                                        ", affine law gives " + std::to_string(predicted));
  }
  return "slope " + std::to_string(slope) + " per expert, residual 0";
}

std::string window_roundtrip() {
  std::mt19937_64 rng(5);
  auto g = T64::randn({4, 6, 8, 3}, rng);
  auto back = window_reverse(window_partition(g, 2), {4, 6, 8}, 2);
  require(std::equal(g.data().begin(), g.data().end(), back.data().begin()), "window_reverse(window_partition(x)) != x");
  auto rolled = inverse_cyclic_shift(cyclic_shift(g, 1), 1);
  require(std::equal(g.data().begin(), g.data().end(), rolled.data().begin()), "inverse shift does not restore the grid");
  return "partition and shift round trips are exact";
}

std::string attention_distribution() {
  std::mt19937_64 rng(6);
  const Grid3 grid{4, 4, 4};
  auto plan = WindowPlan<double>::make(grid, {2, 1});
  auto p = AttentionParams<double>::init(6, 2, 2, rng);
  p.qkv.weight = T64::randn(p.qkv.weight.shape(), rng, 0.8, true);
  p.bias_table = T64::randn(p.bias_table.shape(), rng, 0.5, true);
  auto x = reshape(gather_rows(T64::randn({64, 6}, rng, 3.0), plan.layout.gather), {8, 8, 6});
  T64 weights;
  window_attention(x, p, plan.mask, &weights);
  const std::int64_t n = 8;
  double worst = 0, masked = 0;
  for (std::int64_t r = 0; r < weights.numel() / n; ++r) {
    double s = 0;
    for (std::int64_t j = 0; j < n; ++j) s += weights.data()[r * n + j];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  for (std::int64_t win = 0; win < 8; ++win)
    for (std::int64_t h = 0; h < 2; ++h)
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < n; ++j)
          if (plan.layout.mask[static_cast<std::size_t>((win * n + i) * n + j)] != 0.0)
            masked = std::max(masked, weights.at({win, h, i, j}));
  require(worst <= 1e-6, "attention rows sum to 1 +- " + fmt(worst));
  require(masked <= 1e-8, "masked pair carries weight " + fmt(masked));
  return "row sums within " + fmt(worst) + ", masked weight <= " + fmt(masked);
}

std::string structure() {
  const auto full = SwinSMTConfig::full();
  require(full.stage_tokens(1) == 262144, "p=128 stage-1 token count is " + std::to_string(full.stage_tokens(1)));
  require(full.out_channels() == 118, "K=117 gives " + std::to_string(full.out_channels()) + " output channels");
  const auto mem = moe_memory_estimate(full, 32);
  require(!mem[0].allowed && mem[0].tokens == 262144, "stage-1 Soft MoE is not flagged as rejected");
  const std::int64_t expected[] = {262144, 32768, 4096, 512};
  for (int i = 0; i < 4; ++i) require(mem[static_cast<std::size_t>(i)].tokens == expected[i], "p=128 token ladder is wrong");

  auto bad = SwinSMTConfig::toy();
  bad.experts = {4, 4, 4, 4};
  bool rejected = false;
  try {
    bad.validate();
  } catch (const ConfigError&) {
    rejected = true;
  }
  require(rejected, "a stage-1 Soft MoE configuration was accepted");

  auto cfg = SwinSMTConfig::toy();
  cfg.num_classes = 117;
  SwinSMT<float> model(cfg, 1);
  std::mt19937_64 rng(7);
  auto x = Tensor<float>::randn({1, 32, 32, 32}, rng);
  NoGradGuard ng;
  const auto feats = model.encoder().forward(x);
  for (int s = 1; s <= kNumStages; ++s) {
    const auto g = cfg.patch_size >> s;
    require(feats.stage_tokens[static_cast<std::size_t>(s - 1)] == g * g * g, "stage " + std::to_string(s) + " token count");
  }
  for (const auto& b : model.encoder().stage(1).blocks) require(!b.uses_moe(), "stage 1 carries a Soft MoE");
  for (int s = 2; s <= kNumStages; ++s)
    for (const auto& b : model.encoder().stage(s).blocks) require(b.uses_moe(), "stage " + std::to_string(s) + " lacks Soft MoE");
  std::int64_t stage1_moe = 0;
  model.visit([&](const std::string& n, Tensor<float>&) {
    if (n.find("stages.1.") != std::string::npos && n.find(".moe.") != std::string::npos) ++stage1_moe;
  });
  require(stage1_moe == 0, "stage 1 owns Soft MoE parameters");
  const auto y = model.forward(x);
  require(y.dim(0) == 118, "K=117 model emits " + std::to_string(y.dim(0)) + " channels");
  return "m_i = (p/2^i)^3 at every stage, stage 1 MoE-free, p=128 stage 1 m=262144, 118 output channels";
}

std::string model_param_count() {
  for (const auto& cfg : {SwinSMTConfig::tiny(), SwinSMTConfig::toy()}) {
    SwinSMT<float> model(cfg, 1);
    const auto counted = model.num_parameters();
    const auto closed = param_count(cfg).total;
    require(counted == closed, "closed form " + std::to_string(closed) + " vs counted " + std::to_string(counted));
  }
  // The toy grid has only 8 stage-4 tokens, so sweep the full-size config.
  auto cfg = SwinSMTConfig::full();
  std::vector<std::int64_t> totals;
  const std::int64_t ns[] = {4, 8, 16, 32};
  for (auto n : ns) {
    cfg.experts = {0, n, n, n};
    totals.push_back(param_count(cfg).total);
  }
  // Fit through the end points, require zero residual at the interior points.
  const auto slope = (totals[3] - totals[0]) / (ns[3] - ns[0]);
  for (std::size_t i = 0; i < 4; ++i) {
    require(totals[i] - totals[0] == slope * (ns[i] - ns[0]), "parameter count is not affine in the expert count");
  }
  return "closed form matches counted parameters; count(n) affine with slope " + std::to_string(slope);
}

Tensor<double> hard_logits(const Labels& labels, int classes, double margin = 40.0) {
  const auto n = static_cast<std::int64_t>(labels.size());
  T64 out({classes, n}, std::vector<double>(static_cast<std::size_t>(classes * n), 0.0));
  for (std::int64_t i = 0; i < n; ++i) out.mutable_data()[labels[static_cast<std::size_t>(i)] * n + i] = margin;
  return out;
}

std::string loss_contract() {
  std::mt19937_64 rng(8);
  auto x = T64::randn({4, 6, 5, 3}, rng, 2.0);
  Labels y(90);
  for (auto& v : y) v = static_cast<std::int32_t>(rng() % 4);
  const auto t = combined_loss(x, y);
  const double gap = std::abs(t.total.item() - (t.dice.item() + 1.0 * t.ce.item()));
  require(gap <= 1e-12, "combined loss differs from L_D + L_CE by " + fmt(gap));

  Labels labels(64);
  for (auto& v : labels) v = static_cast<std::int32_t>(rng() % 3);
  const auto perfect = combined_loss(hard_logits(labels, 3), labels);
  require(perfect.dice.item() <= 1e-3, "perfect prediction gives L_D = " + fmt(perfect.dice.item()));
  const auto self = dsc_metric(labels, labels, foreground_classes(2));
  require(self.mean == 100.0, "DSC of a perfect prediction is " + fmt(self.mean));

  Labels truth(32, 0), pred(32, 0);
  for (int i = 0; i < 8; ++i) truth[static_cast<std::size_t>(i)] = 1;
  for (int i = 4; i < 12; ++i) pred[static_cast<std::size_t>(i)] = 1;
  const auto half = dsc_metric(pred, truth, {1});
  require(half.mean == 50.0, "half-overlap DSC is " + fmt(half.mean));
  return "L = L_D + L_CE, perfect L_D " + fmt(perfect.dice.item()) + ", DSC 100 / 50 exact";
}

std::string single_tile() {
  SwinSMT<float> model(SwinSMTConfig::tiny(), 3);
  std::mt19937_64 rng(9);
  auto x = Tensor<float>::randn({1, 32, 32, 32}, rng);
  SlidingWindowConfig cfg;
  cfg.roi = 32;
  NoGradGuard ng;
  const auto direct = model.forward(x);
  const auto tiled = sliding_window_infer(x, model, cfg);
  require(tiled.shape() == direct.shape(), "shape mismatch");
  require(std::equal(tiled.data().begin(), tiled.data().end(), direct.data().begin()),
          "single-tile sliding window differs from the direct forward");
  return "bit-exact on a 32^3 volume";
}

std::string constant_blend() {
  std::mt19937_64 rng(10);
  SlidingWindowConfig cfg;
  cfg.roi = 8;
  auto vol = Tensor<float>::randn({1, 21, 13, 30}, rng);
  const float c = 3.25f;
  auto y = sliding_window_infer<float>(vol, [&](const Tensor<float>&) { return Tensor<float>({2, 8, 8, 8}, c); }, cfg);
  double worst = 0;
  for (float v : y.data()) worst = std::max(worst, std::abs(static_cast<double>(v) - c));
  require(worst <= 1e-6, "constant logits blend to within " + fmt(worst) + " of the constant");
  return "max deviation " + fmt(worst);
}

std::string adamw_oracle() {
  std::vector<T64> p{T64({1}, {1.0}, true)};
  p[0].mutable_grad()[0] = 1.0;
  AdamWState<double> st;
  adamw_step(p, st, 0.1, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  const double w = p[0].data()[0];
  require(std::abs(w - 0.9) <= 1e-8, "one step from w=1, g=1, lr=0.1 gives " + fmt(w));

  std::vector<T64> q{T64({1}, {2.0}, true)};
  AdamWState<double> sq;
  adamw_step(q, sq, 0.01, AdamWConfig{0.9, 0.999, 1e-8, 0.1});
  require(q[0].data()[0] == 2.0 - 0.01 * 0.1 * 2.0, "decoupled decay is not exact");
  return "single-step and decay oracles hold";
}

std::string schedule() {
  const std::int64_t total = 2000, warm = 100;
  const double base = 1e-4;
  require(warmup_cosine_lr(0, total, warm, base) == 0.0, "lr(0) != 0");
  require(warmup_cosine_lr(warm, total, warm, base) == base, "lr(warmup) != base");
  require(std::abs(warmup_cosine_lr(warm + (total - warm) / 2, total, warm, base) - base / 2) <= 1e-15, "cosine midpoint != base/2");
  require(warmup_cosine_lr(total, total, warm, base) == 0.0, "lr(total) != 0");
  const double bound = base * std::max(1.0 / warm, std::numbers::pi / total);
  for (std::int64_t t = 0; t < total; ++t) {
    require(std::abs(warmup_cosine_lr(t + 1, total, warm, base) - warmup_cosine_lr(t, total, warm, base)) <= bound * (1 + 1e-12),
            "schedule jumps at step " + std::to_string(t));
  }
  return "landmarks and continuity bound hold";
}

SwinSMTConfig small_model() {
  auto c = SwinSMTConfig::tiny();
  c.num_classes = 4;
  return c;
}

TrainData small_data() {
  DataConfig d;
  d.phantom_side = 32;
  d.train_count = 2;
  d.val_count = 1;
  d.test_count = 0;
  d.seed = 77;
  return make_train_data(d);
}

std::string checkpoint_roundtrip() {
  SwinSMT<float> model(small_model(), 21);
  TrainState<float> st;
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.steps_per_epoch = 2;
  cfg.lr = 3e-3;
  train_loop(model, small_data(), cfg, st);
  const auto bytes = encode_checkpoint(model, &st, &cfg);
  SwinSMT<float> other(small_model(), 22);
  TrainState<float> st2;
  decode_checkpoint(bytes, other, &st2);
  require(encode_checkpoint(other, &st2, &cfg) == bytes, "save -> load -> save changed the checkpoint bytes");
  std::mt19937_64 rng(1);
  const auto x = Tensor<float>::uniform({1, 32, 32, 32}, rng, 0.0f, 1.0f);
  NoGradGuard ng;
  const auto a = model.forward(x), b = other.forward(x);
  require(std::equal(a.data().begin(), a.data().end(), b.data().begin()), "reloaded model gives different logits");
  return std::to_string(bytes.size()) + " bytes, byte-identical re-save, identical logits";
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

std::string determinism() {
  const auto data = small_data();
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.steps_per_epoch = 4;
  cfg.lr = 3e-3;
  cfg.seed = 5;
  cfg.eval_interval = 2;
  auto run = [&](std::int64_t split, std::vector<StepMetrics>& hist) {
    SwinSMT<float> model(small_model(), 9);
    TrainState<float> st;
    train_loop(model, data, cfg, st, split);
    hist = st.history;
    if (split >= cfg.total_steps()) return encode_checkpoint(model, &st, &cfg);
    SwinSMT<float> resumed(small_model(), 99);
    TrainState<float> rs;
    decode_checkpoint(encode_checkpoint(model, &st, &cfg), resumed, &rs);
    train_loop(resumed, data, cfg, rs);
    hist.insert(hist.end(), rs.history.begin(), rs.history.end());
    return encode_checkpoint(resumed, &rs, &cfg);
  };
  std::vector<StepMetrics> a, b, c;
  const auto ca = run(4, a), cb = run(4, b), cc = run(2, c);
  require(same_history(a, b), "two runs with the same seed produced different metric histories");
  require(ca == cb, "two runs with the same seed produced different checkpoints");
  require(same_history(a, c), "resumed run diverged from the unresumed run");
  require(ca == cc, "resumed run ends with a different checkpoint");
  return "identical histories and checkpoints; resume replays step for step";
}

std::string model_gradcheck() {
  SwinSMT<double> model(SwinSMTConfig::tiny(), 8);
  std::mt19937_64 rng(9);
  auto x = T64::randn({1, 32, 32, 32}, rng);
  Labels y(32 * 32 * 32);
  for (auto& v : y) v = static_cast<std::int32_t>(rng() % 3);
  std::vector<NamedParam> params;
  for (auto& [n, t] : model.named_parameters()) params.push_back({n, t});
  GradCheckOptions opt;
  opt.eps = 1e-4;
  opt.max_entries_per_param = 2;
  const auto r = finite_diff_check([&] { return combined_loss(model.forward(x), y).total; }, params, opt);
  require(r.max_relative_error <= 1e-4, "max relative error " + fmt(r.max_relative_error) + " at " + r.worst_param + "[" +
                                            std::to_string(r.worst_index) + "]");
  return std::to_string(r.probes) + " probes over " + std::to_string(params.size()) + " tensors, max relative error " +
         fmt(r.max_relative_error);
}

}  // namespace

std::vector<Check> all_checks() {
  return {
      {"tensor.softmax_normalized", true, softmax_normalized},
      {"soft_moe.oracle", true, soft_moe_oracle},
      {"soft_moe.shift_invariance", true, soft_moe_shift_invariance},
      {"soft_moe.gradcheck", true, soft_moe_gradcheck},
      {"soft_moe.param_affine", true, soft_moe_param_affine},
      {"swin.window_roundtrip", true, window_roundtrip},
      {"swin.attention_distribution", true, attention_distribution},
      {"model.structure", true, structure},
      {"model.param_count", true, model_param_count},
      {"loss.contract", true, loss_contract},
      {"infer.single_tile", true, single_tile},
      {"infer.constant_blend", true, constant_blend},
      {"train.adamw_oracle", true, adamw_oracle},
      {"train.schedule", true, schedule},
      {"train.checkpoint_roundtrip", true, checkpoint_roundtrip},
      {"train.determinism", true, determinism},
      {"model.gradcheck", false, model_gradcheck},
  };
}

const Check& find_check(const std::string& name) {
  static const auto checks = all_checks();
  for (const auto& c : checks) {
    if (c.name == name) return c;
  }
  throw std::out_of_range("no check named " + name);
}

CheckResult run_check(const Check& c) {
  CheckResult r;
  r.name = c.name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    r.detail = c.body();
    r.passed = true;
  } catch (const std::exception& e) {
    r.detail = e.what();
    r.passed = false;
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

}  // namespace smt::verify
