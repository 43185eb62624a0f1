// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <sstream>

#include "smt/ops.hpp"
#include "smt/train.hpp"
#include "../tensor/graph.hpp"

namespace smt {

std::int64_t TrainConfig::warmup_steps() const {
  return static_cast<std::int64_t>(std::floor(warmup_fraction * static_cast<double>(total_steps())));
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid train config: " + m); };
  if (epochs < 0 || steps_per_epoch < 1) fail("epochs must be >= 0 and steps_per_epoch >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be > 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) fail("warmup_fraction must lie in [0, 1)");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (eval_interval < 0) fail("eval_interval must be >= 0");
  if (!(foreground_prob >= 0.0 && foreground_prob <= 1.0)) fail("foreground_prob must lie in [0, 1]");
  if (!(overlap >= 0.0 && overlap < 1.0)) fail("overlap must lie in [0, 1)");
  loss.validate();
}

bool TrainConfig::operator==(const TrainConfig& o) const {
  return epochs == o.epochs && steps_per_epoch == o.steps_per_epoch && lr == o.lr && weight_decay == o.weight_decay &&
         warmup_fraction == o.warmup_fraction && batch_size == o.batch_size && seed == o.seed &&
         deterministic == o.deterministic && eval_interval == o.eval_interval && augment == o.augment &&
         foreground_prob == o.foreground_prob && overlap == o.overlap && loss.lambda == o.loss.lambda &&
         loss.dice_eps == o.loss.dice_eps && loss.include_background_in_dice == o.loss.include_background_in_dice;
}

void DataConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("invalid data config: " + m); };
  if (phantom_side < 16) fail("phantom_side must be >= 16");
  if (train_count < 1 || val_count < 0 || test_count < 0) fail("need train_count >= 1 and non-negative val/test counts");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
}

namespace {

std::uint64_t split_offset(Split s) {
  switch (s) {
    case Split::train: return 0;
    case Split::val: return 1'000'000;
    case Split::test: return 2'000'000;
  }
  return 0;
}

}  // namespace

std::vector<Phantom> make_phantoms(const DataConfig& cfg, Split split) {
  cfg.validate();
  const auto n = split == Split::train ? cfg.train_count : split == Split::val ? cfg.val_count : cfg.test_count;
  std::vector<Phantom> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    auto spec = PhantomSpec::standard(cfg.phantom_side, cfg.seed + split_offset(split) + static_cast<std::uint64_t>(i));
    spec.noise_sigma = cfg.noise_sigma;
    auto ph = generate_phantom(spec);
    ph.image = hu_clip_scale(ph.image);
    out.push_back(std::move(ph));
  }
  return out;
}

TrainData make_train_data(const DataConfig& cfg) { return {make_phantoms(cfg, Split::train), make_phantoms(cfg, Split::val)}; }

template <typename T>
EvalReport evaluate(const SwinSMT<T>& model, const std::vector<Phantom>& volumes, double overlap) {
  const auto& mc = model.config();
  const auto classes = foreground_classes(static_cast<int>(mc.num_classes));
  SlidingWindowConfig sw;
  sw.roi = mc.patch_size;
  sw.overlap = overlap;

  EvalReport rep;
  std::vector<double> sums(classes.size(), 0.0);
  std::vector<int> counts(classes.size(), 0);
  double total = 0;
  int scored = 0;
  for (const auto& ph : volumes) {
    const auto logits = sliding_window_infer(to_tensor<T>(ph.image), model, sw);
    const auto d = dsc_metric(argmax_labels(logits), to_labels(ph.labels), classes);
    rep.per_volume.push_back(d.mean);
    if (!std::isnan(d.mean)) {
      total += d.mean;
      ++scored;
    }
    for (std::size_t c = 0; c < classes.size(); ++c) {
      if (d.per_class[c]) {
        sums[c] += *d.per_class[c];
        ++counts[c];
      }
    }
  }
  for (std::size_t c = 0; c < classes.size(); ++c) {
    rep.per_class.push_back(counts[c] ? sums[c] / counts[c] : std::numeric_limits<double>::quiet_NaN());
  }
  rep.mean_dsc = scored ? total / scored : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

namespace {

class DeterministicScope {
 public:
  explicit DeterministicScope(bool on) : prev_(deterministic_mode()) { set_deterministic_mode(on || prev_); }
  ~DeterministicScope() { set_deterministic_mode(prev_); }
  DeterministicScope(const DeterministicScope&) = delete;
  DeterministicScope& operator=(const DeterministicScope&) = delete;

 private:
  bool prev_;
};

std::mt19937_64 sample_rng(std::uint64_t seed, std::int64_t step, std::int64_t sample) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(static_cast<std::uint64_t>(step) >> 32),
                    static_cast<std::uint32_t>(sample)};
  return std::mt19937_64(seq);
}

}  // namespace

template <typename T>
void train_loop(SwinSMT<T>& model, const TrainData& data, const TrainConfig& cfg, TrainState<T>& state,
                std::int64_t stop_at, const StepLogger& log, const BestHook<T>& on_best) {
  cfg.validate();
  if (data.train.empty()) throw DataError("no training volumes");
  const auto total = cfg.total_steps();
  const auto end = stop_at < 0 ? total : std::min(stop_at, total);
  if (state.step >= end) return;

  DeterministicScope det(cfg.deterministic);
  const auto p = model.config().patch_size;
  const AdamWConfig opt{0.9, 0.999, 1e-8, cfg.weight_decay};
  auto named = model.named_parameters();
  std::vector<Tensor<T>> params;
  params.reserve(named.size());
  for (auto& [_, t] : named) params.push_back(t);

  const AugmentConfig aug;
  const auto inv_b = static_cast<T>(1.0 / static_cast<double>(cfg.batch_size));
  while (state.step < end) {
    for (auto& t : params) t.zero_grad();
    StepMetrics m;
    m.step = state.step + 1;
    for (std::int64_t b = 0; b < cfg.batch_size; ++b) {
      auto rng = sample_rng(cfg.seed, state.step, b);
      const auto vi = std::uniform_int_distribution<std::size_t>(0, data.train.size() - 1)(rng);
      const auto& ph = data.train[vi];
      auto patch = random_crop_patch(ph.image, ph.labels, p, rng, cfg.foreground_prob);
      if (cfg.augment) patch = augment(patch, rng, aug);
      const auto logits = model.forward(to_tensor<T>(patch.image));
      const auto terms = combined_loss(logits, to_labels(patch.labels), cfg.loss);
      backward(scale(terms.total, inv_b));
      m.loss += static_cast<double>(terms.total.item()) / static_cast<double>(cfg.batch_size);
      m.dice += static_cast<double>(terms.dice.item()) / static_cast<double>(cfg.batch_size);
      m.ce += static_cast<double>(terms.ce.item()) / static_cast<double>(cfg.batch_size);
    }

    double sq = 0;
    for (const auto& t : params) {
      if (!t.has_grad()) continue;
      for (T g : t.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    m.grad_norm = std::sqrt(sq);
    m.lr = warmup_cosine_lr(state.step + 1, total, cfg.warmup_steps(), cfg.lr);
    if (!std::isfinite(m.loss) || !std::isfinite(m.grad_norm)) {
      std::ostringstream msg;
      msg << "training diverged at step " << m.step << ": loss " << m.loss << ", grad norm " << m.grad_norm << ", lr "
          << m.lr;
      if (!state.history.empty()) {
        const auto& last = state.history.back();
        msg << " (previous step: loss " << last.loss << ", grad norm " << last.grad_norm << ", lr " << last.lr << ")";
      }
      throw TrainingDiverged(msg.str());
    }
    adamw_step(params, state.opt, m.lr, opt);
    state.step += 1;

    if (cfg.eval_interval > 0 && !data.val.empty() && (state.step % cfg.eval_interval == 0 || state.step == total)) {
      m.eval_dsc = evaluate(model, data.val, cfg.overlap).mean_dsc;
      if (!std::isnan(m.eval_dsc) && (std::isnan(state.best_dsc) || m.eval_dsc > state.best_dsc)) {
        state.best_dsc = m.eval_dsc;
        state.best_step = state.step;
        if (on_best) on_best(model, state);
      }
    }
    state.history.push_back(m);
    if (log) log(m);
  }
  for (auto& t : params) t.zero_grad();
}

#define SMT_INST(T)                                                                                                    \
  template EvalReport evaluate<T>(const SwinSMT<T>&, const std::vector<Phantom>&, double);                            \
  template void train_loop<T>(SwinSMT<T>&, const TrainData&, const TrainConfig&, TrainState<T>&, std::int64_t,       \
                              const StepLogger&, const BestHook<T>&);
SMT_INSTANTIATE_FLOAT_TYPES(SMT_INST)
#undef SMT_INST

}  // namespace smt
