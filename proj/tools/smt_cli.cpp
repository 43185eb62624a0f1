// SPDX-License-Identifier: Apache-2.0
//
// smt: phantom generation, training, inference, verification and parameter
// accounting from the command line.
//
// Exit codes: 0 success, 1 verification failure, 2 usage error, 3 data/format error.
#include <CLI11.hpp>

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "checks.hpp"
#include "smt/config_io.hpp"
#include "smt/faults.hpp"
#include "smt/train.hpp"
#include "smt/volume.hpp"

namespace fs = std::filesystem;
using namespace smt;

namespace {

constexpr int kExitOk = 0, kExitVerify = 1, kExitUsage = 2, kExitData = 3;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::uint64_t fnv1a64(const std::string& bytes, std::uint64_t h = 0xcbf29ce484222325ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw FormatError("failed writing " + path.string());
}

// ---- phantom-gen -----------------------------------------------------------

struct PhantomGenOptions {
  std::string spec, out_dir;
  std::int64_t count = 1;
  std::uint64_t seed = 0;
};

int cmd_phantom_gen(const PhantomGenOptions& o) {
  std::int64_t side = 64;
  double noise = 20.0;
  if (!o.spec.empty()) {
    Json j;
    try {
      j = Json::parse(read_file_bytes(o.spec));
    } catch (const Json::parse_error& e) {
      throw FormatError("phantom spec is not valid JSON: " + std::string(e.what()));
    }
    if (!j.is_object()) throw ConfigError("phantom spec: expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() == "side" && it->is_number_integer()) side = it->get<std::int64_t>();
      else if (it.key() == "noise_sigma" && it->is_number()) noise = it->get<double>();
      else throw ConfigError("phantom spec: unknown or mistyped key '" + it.key() + "'");
    }
  }
  if (o.count < 1) throw UsageError("--count must be >= 1");
  fs::create_directories(o.out_dir);

  Json entries = Json::array();
  std::uint64_t set_hash = fnv1a64("");
  for (std::int64_t i = 0; i < o.count; ++i) {
    const auto seed = o.seed + static_cast<std::uint64_t>(i);
    auto spec = PhantomSpec::standard(side, seed);
    spec.noise_sigma = noise;
    const auto ph = generate_phantom(spec);
    const auto image_name = "phantom_" + std::to_string(seed) + "_image.svol";
    const auto label_name = "phantom_" + std::to_string(seed) + "_labels.svol";
    const auto image = encode_svol(ph.image), labels = encode_svol(ph.labels);
    write_text(fs::path(o.out_dir) / image_name, image);
    write_text(fs::path(o.out_dir) / label_name, labels);
    const auto hi = fnv1a64(image), hl = fnv1a64(labels);
    set_hash = fnv1a64(image, fnv1a64(labels, set_hash));
    entries.push_back(Json{{"seed", seed}, {"image", image_name}, {"labels", label_name},
                           {"image_fnv1a64", hex64(hi)}, {"labels_fnv1a64", hex64(hl)}});
  }
  Json manifest{{"side", side}, {"noise_sigma", noise}, {"count", o.count}, {"first_seed", o.seed},
                {"fileset_fnv1a64", hex64(set_hash)}, {"entries", entries}};
  write_text(fs::path(o.out_dir) / "manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << o.count << " phantom pairs to " << o.out_dir << " (fileset fnv1a64 " << hex64(set_hash) << ")\n";
  return kExitOk;
}

// ---- train -----------------------------------------------------------------

struct TrainOptions {
  std::string config, out_dir = "run", resume;
  std::int64_t stop_at = -1;
  std::int64_t checkpoint_every = 0;
};

constexpr const char* kLogHeader = "step,loss,dice_loss,ce_loss,lr,eval_dsc";

std::string log_row(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%" PRId64 ",%.9g,%.9g,%.9g,%.9g,", m.step, m.loss, m.dice, m.ce, m.lr);
  std::string row = buf;
  if (!std::isnan(m.eval_dsc)) {
    std::snprintf(buf, sizeof buf, "%.6f", m.eval_dsc);
    row += buf;
  }
  return row;
}

// Keeps the header and rows up to `step` of an existing log, so a resumed run
// continues the file as if it had never stopped.
std::string truncated_log(const fs::path& path, std::int64_t step) {
  std::string out = std::string(kLogHeader) + "\n";
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::getline(in, line);
  if (line != kLogHeader) throw DataError("existing metric log " + path.string() + " has an unexpected header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (std::stoll(line.substr(0, line.find(','))) > step) break;
    out += line + "\n";
  }
  return out;
}

int cmd_train(const TrainOptions& o) {
  const auto rc = load_run_config(o.config);
  fs::create_directories(o.out_dir);
  const fs::path dir(o.out_dir);
  write_text(dir / "config.json", serialize_run_config(rc));

  SwinSMT<float> model(rc.model, rc.train.seed);
  TrainState<float> state;
  if (!o.resume.empty()) {
    const auto bytes = read_file_bytes(o.resume);
    const auto stored = checkpoint_train_config(bytes);
    if (!stored || !(*stored == rc.train)) {
      throw ConfigError("checkpoint " + o.resume + " was written with a different train configuration");
    }
    decode_checkpoint(bytes, model, &state);
    std::cerr << "resuming from step " << state.step << "\n";
  }
  const auto data = make_train_data(rc.data);
  const auto every = o.checkpoint_every > 0 ? o.checkpoint_every
                                            : (rc.train.eval_interval > 0 ? rc.train.eval_interval : rc.train.steps_per_epoch);

  const auto log_path = dir / "metrics.csv";
  write_text(log_path, truncated_log(log_path, state.step));
  std::ofstream log(log_path, std::ios::app);
  const auto last = (dir / "last.ckpt").string(), best = (dir / "best.ckpt").string();
  train_loop<float>(
      model, data, rc.train, state, o.stop_at,
      [&](const StepMetrics& m) {
        log << log_row(m) << "\n" << std::flush;
        if (m.step % every == 0) save_checkpoint(last, model, &state, &rc.train);
        if (m.step % 50 == 0 || !std::isnan(m.eval_dsc)) std::cerr << log_row(m) << "\n";
      },
      [&](SwinSMT<float>& mdl, const TrainState<float>& st) { save_checkpoint(best, mdl, &st, &rc.train); });
  save_checkpoint(last, model, &state, &rc.train);

  std::cout << "trained to step " << state.step << " of " << rc.train.total_steps();
  if (!std::isnan(state.best_dsc)) std::cout << "; best validation DSC " << state.best_dsc << " at step " << state.best_step;
  std::cout << "\n";
  if (state.step == rc.train.total_steps() && rc.data.test_count > 0) {
    const auto rep = evaluate(model, make_phantoms(rc.data, Split::test), rc.inference.overlap);
    std::cout << "held-out mean DSC " << rep.mean_dsc << " over " << rc.data.test_count << " phantoms\n";
  }
  return kExitOk;
}

// ---- infer -----------------------------------------------------------------

struct InferOptions {
  std::string model, input, output, truth;
  double overlap = 0.5;
  std::int64_t roi = 0;
  bool scaled = false;
};

VolumeGrid to_target_grid(VolumeGrid v, const char* what) {
  constexpr double kTarget = 1.5;
  if (v.spacing[0] != kTarget || v.spacing[1] != kTarget || v.spacing[2] != kTarget) {
    std::cerr << "resampling " << what << " to " << kTarget << " mm isotropic\n";
    v = resample_isotropic(v, kTarget);
  }
  return v;
}

int cmd_infer(const InferOptions& o) {
  const auto bytes = read_file_bytes(o.model);
  const auto mc = checkpoint_model_config(bytes);
  SwinSMT<float> model(mc, 0);
  decode_checkpoint(bytes, model);

  SlidingWindowConfig sw;
  sw.roi = o.roi > 0 ? o.roi : mc.patch_size;
  sw.overlap = o.overlap;
  if (sw.roi != mc.patch_size) {
    throw UsageError("--roi " + std::to_string(sw.roi) + " does not match the model patch size " + std::to_string(mc.patch_size));
  }
  sw.validate();

  auto image = read_svol(o.input);
  if (image.kind != VolumeKind::intensity) throw DataError(o.input + " is a label volume, expected intensities");
  image = to_target_grid(image, "input");
  if (!o.scaled) image = hu_clip_scale(image);
  const auto logits = sliding_window_infer(to_tensor<float>(image), model, sw);
  const auto pred = argmax_labels(logits);
  write_svol(o.output, label_volume(image.dims, image.spacing, pred));
  std::cout << "wrote " << o.output << " (" << image.dims[0] << "x" << image.dims[1] << "x" << image.dims[2] << ")\n";

  if (!o.truth.empty()) {
    auto truth = read_svol(o.truth);
    if (truth.kind != VolumeKind::label) throw DataError(o.truth + " is not a label volume");
    truth = to_target_grid(truth, "truth");
    if (truth.dims != image.dims) throw DataError("truth volume dims do not match the input");
    const auto classes = foreground_classes(static_cast<int>(mc.num_classes));
    const auto rep = dsc_metric(pred, to_labels(truth), classes);
    for (std::size_t i = 0; i < classes.size(); ++i) {
      std::cout << "class " << classes[i] << " DSC ";
      if (rep.per_class[i]) std::cout << *rep.per_class[i] << "\n";
      else std::cout << "n/a (absent from both)\n";
    }
    std::cout << "mean DSC " << rep.mean << " over " << rep.scored << " classes\n";
  }
  return kExitOk;
}

// ---- verify ----------------------------------------------------------------

struct VerifyOptions {
  bool fast = false, list = false, trace = false;
  std::string inject, only;
};

void print_trace() {
  std::mt19937_64 rng(1);
  auto p = SoftMoEParams<double>::init(SoftMoEConfig::for_stage(8, 4, 2), rng);
  auto x = Tensor<double>::randn({8, 4}, rng, 1.5);
  SoftMoETrace<double> tr;
  soft_moe_forward(x, p, &tr);
  const auto m = tr.dispatch.dim(0), ns = tr.dispatch.dim(1);
  Json cols = Json::array(), rows = Json::array(), top = Json::array();
  for (std::int64_t j = 0; j < ns; ++j) {
    double s = 0;
    for (std::int64_t i = 0; i < m; ++i) s += tr.dispatch.data()[i * ns + j];
    cols.push_back(s);
  }
  for (std::int64_t i = 0; i < m; ++i) {
    double s = 0;
    std::vector<std::pair<double, std::int64_t>> w;
    for (std::int64_t j = 0; j < ns; ++j) {
      s += tr.combine.data()[i * ns + j];
      w.emplace_back(tr.dispatch.data()[i * ns + j], j);
    }
    rows.push_back(s);
    std::sort(w.begin(), w.end(), [](auto a, auto b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
    Json t = Json::array();
    for (std::size_t k = 0; k < 3 && k < w.size(); ++k) t.push_back(Json{{"slot", w[k].second}, {"weight", w[k].first}});
    top.push_back(Json{{"token", i}, {"top_slots", t}});
  }
  std::cout << Json{{"tokens", m}, {"slots", ns}, {"dispatch_column_sums", cols}, {"combine_row_sums", rows}, {"top_dispatch", top}}.dump(2)
            << "\n";
}

int cmd_verify(const VerifyOptions& o) {
  if (!o.inject.empty()) {
    const auto f = parse_fault(o.inject);
    if (!f) {
      std::string names;
      for (auto x : all_faults()) names += " " + fault_name(x);
      throw UsageError("unknown fault '" + o.inject + "'; known:" + names);
    }
    inject_fault(*f);
    std::cout << "fault injected: " << fault_name(*f) << "\n";
  }
  if (o.trace) {
    print_trace();
    return kExitOk;
  }
  const auto checks = verify::all_checks();
  if (o.list) {
    for (const auto& c : checks) std::cout << c.name << (c.fast ? "" : "  (full only)") << "\n";
    return kExitOk;
  }
  if (!o.only.empty()) verify::find_check(o.only);  // throws for unknown names

  int failed = 0, run = 0;
  double total = 0;
  for (const auto& c : checks) {
    if (!o.only.empty() && c.name != o.only) continue;
    if (o.only.empty() && o.fast && !c.fast) continue;
    const auto r = verify::run_check(c);
    ++run;
    total += r.seconds;
    if (!r.passed) ++failed;
    std::printf("%s  %-30s %7.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %d checks passed in %.1fs\n", run - failed, run, total);
  return failed ? kExitVerify : kExitOk;
}

// ---- paramcount ------------------------------------------------------------

struct ParamCountOptions {
  std::string config, profile = "toy", sweep = "1,2,4,8,16,32";
  bool memory = false;
};

std::vector<std::int64_t> parse_list(const std::string& s) {
  std::vector<std::int64_t> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    try {
      std::size_t used = 0;
      const auto v = std::stoll(part, &used);
      if (used != part.size() || v < 1) throw std::invalid_argument("");
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("--sweep-experts expects positive integers separated by commas, got '" + s + "'");
    }
  }
  if (out.size() < 2) throw UsageError("--sweep-experts needs at least two expert counts");
  return out;
}

// Published totals for the full-size profile.
std::string reported_total(std::int64_t n) {
  switch (n) {
    case 4: return "83.62M";
    case 8: return "87.01M";
    case 16: return "114.93M";
    case 32: return "170.78M";
    default: return "-";
  }
}

int cmd_paramcount(const ParamCountOptions& o) {
  SwinSMTConfig base;
  if (!o.config.empty()) {
    base = load_run_config(o.config).model;
  } else if (o.profile == "toy") {
    base = SwinSMTConfig::toy();
  } else if (o.profile == "tiny") {
    base = SwinSMTConfig::tiny();
  } else if (o.profile == "full") {
    base = SwinSMTConfig::full();
  } else {
    throw UsageError("--profile must be toy, tiny or full");
  }
  base.validate();
  const auto requested = parse_list(o.sweep);

  const auto b = param_count(base);
  std::cout << "config: " << describe(base) << "\n";
  std::cout << "total parameters: " << b.total << "\n";
  for (const auto& [name, count] : b.parts) std::cout << "  " << name << ": " << count << "\n";
  std::cout << "  (Soft MoE layers " << b.moe_layers << ", router " << b.moe_router << ", experts " << b.moe_experts << ")\n\n";

  std::vector<std::int64_t> ns, totals;
  for (auto n : requested) {
    auto c = base;
    for (int s = 2; s <= kNumStages; ++s) c.experts[static_cast<std::size_t>(s - 1)] = n;
    try {
      c.validate();
    } catch (const ConfigError& e) {
      std::cout << "skipping n=" << n << ": " << e.what() << "\n";
      continue;
    }
    ns.push_back(n);
    totals.push_back(param_count(c).total);
  }
  if (ns.size() < 2) throw UsageError("fewer than two expert counts are valid for this configuration");
  // Exact affine fit through the end points; the residual at every point must be zero.
  const auto dn = ns.back() - ns.front();
  const auto dc = totals.back() - totals.front();
  const bool full_profile = base.patch_size == 128 && base.embed_dim == 48 && base.num_classes == 117;
  std::printf("%8s %16s %16s %10s %20s\n", "experts", "total", "affine fit", "residual",
              full_profile ? "reported" : "reported*");
  double worst = 0;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    const double fit = static_cast<double>(totals.front()) + static_cast<double>(dc) * static_cast<double>(ns[i] - ns.front()) / static_cast<double>(dn);
    const double residual = static_cast<double>(totals[i]) - fit;
    worst = std::max(worst, std::abs(residual));
    std::printf("%8" PRId64 " %16" PRId64 " %16.1f %10.1f %20s\n", ns[i], totals[i], fit, residual, reported_total(ns[i]).c_str());
  }
  std::printf("slope per expert (all MoE layers): %.1f; max affine residual: %.1f\n",
              static_cast<double>(dc) / static_cast<double>(dn), worst);
  if (!full_profile) std::printf("* reported values refer to the full-size profile, not this configuration\n");

  if (o.memory) {
    std::printf("\n%6s %10s %6s %8s %16s %12s %16s %s\n", "stage", "tokens m", "dim d", "experts", "m^2", "m*d", "n*d^2", "");
    for (const auto& t : moe_memory_estimate(base, ns.back())) {
      std::printf("%6d %10" PRId64 " %6" PRId64 " %8" PRId64 " %16" PRId64 " %12" PRId64 " %16" PRId64 " %s\n", t.stage, t.tokens,
                  t.dim, t.experts, t.m_squared, t.md, t.nd_squared, t.allowed ? "" : "(Soft MoE rejected at stage 1)");
    }
  }
  return worst == 0.0 ? kExitOk : kExitVerify;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Swin SMT segmentation toolkit: phantoms, training, inference and verification"};
  app.require_subcommand(1);
  bool deterministic = false;
  app.add_flag("--deterministic", deterministic, "Force deterministic kernels (same as SMT_DETERMINISTIC=1)");

  PhantomGenOptions pg;
  auto* c_pg = app.add_subcommand("phantom-gen", "Write synthetic phantom (image, label) SVOL pairs and a manifest");
  c_pg->add_option("--spec", pg.spec, "JSON phantom spec with optional keys side, noise_sigma")->check(CLI::ExistingFile);
  c_pg->add_option("--out-dir", pg.out_dir, "Output directory")->required();
  c_pg->add_option("--count", pg.count, "Number of phantoms")->capture_default_str();
  c_pg->add_option("--seed", pg.seed, "Seed of the first phantom; phantom i uses seed + i")->capture_default_str();

  TrainOptions tr;
  auto* c_tr = app.add_subcommand("train", "Train on generated phantoms; writes metrics.csv, last.ckpt and best.ckpt");
  c_tr->add_option("--config", tr.config, "JSON run config {model, train, data, inference}")->required()->check(CLI::ExistingFile);
  c_tr->add_option("--out-dir", tr.out_dir, "Directory for checkpoints and the metric log")->capture_default_str();
  c_tr->add_option("--resume", tr.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  c_tr->add_option("--stop-at", tr.stop_at, "Stop after this many total steps (default: run to the end)")->check(CLI::NonNegativeNumber);
  c_tr->add_option("--checkpoint-every", tr.checkpoint_every, "Steps between last.ckpt saves (default: eval interval or one epoch)")
      ->check(CLI::PositiveNumber);

  InferOptions in;
  auto* c_in = app.add_subcommand("infer", "Segment a volume with sliding-window inference");
  c_in->add_option("--model", in.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  c_in->add_option("--input", in.input, "Intensity SVOL (Hounsfield units unless --scaled)")->required()->check(CLI::ExistingFile);
  c_in->add_option("--output", in.output, "Label SVOL to write")->required();
  c_in->add_option("--overlap", in.overlap, "Tile overlap in [0, 1)")->capture_default_str();
  c_in->add_option("--roi", in.roi, "Tile side; must equal the model patch size");
  c_in->add_option("--truth", in.truth, "Label SVOL; prints per-class DSC")->check(CLI::ExistingFile);
  c_in->add_flag("--scaled", in.scaled, "Input is already clipped and scaled to [0, 1]");

  VerifyOptions ve;
  auto* c_ve = app.add_subcommand("verify", "Run the invariant, oracle and gradient checks");
  c_ve->add_flag("--fast", ve.fast, "Skip the slow whole-model gradient check");
  auto* o_inject = c_ve->add_option("--inject", ve.inject, "Switch on a deliberate defect (unnormalized-softmax, "
                                                           "adamw-no-bias-correction, unnormalized-blend)");
  auto* o_only = c_ve->add_option("--only", ve.only, "Run a single named check");
  auto* f_list = c_ve->add_flag("--list", ve.list, "List check names and exit");
  auto* f_trace = c_ve->add_flag("--trace", ve.trace, "Dump Soft MoE routing sums and top token-to-slot weights as JSON");
  f_list->excludes(o_only)->excludes(f_trace)->excludes(o_inject);
  f_trace->excludes(o_only);

  ParamCountOptions pc;
  auto* c_pc = app.add_subcommand("paramcount", "Parameter totals over an expert-count sweep");
  auto* o_cfg = c_pc->add_option("--config", pc.config, "JSON run config (model section used)")->check(CLI::ExistingFile);
  auto* o_prof = c_pc->add_option("--profile", pc.profile, "Built-in profile: toy, tiny or full")->capture_default_str();
  o_cfg->excludes(o_prof);
  c_pc->add_option("--sweep-experts", pc.sweep, "Comma-separated expert counts for stages 2-4")->capture_default_str();
  c_pc->add_flag("--memory", pc.memory, "Also print the per-stage Soft MoE memory terms");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }
  if (deterministic) set_deterministic_mode(true);

  try {
    if (c_pg->parsed()) return cmd_phantom_gen(pg);
    if (c_tr->parsed()) return cmd_train(tr);
    if (c_in->parsed()) return cmd_infer(in);
    if (c_ve->parsed()) return cmd_verify(ve);
    if (c_pc->parsed()) return cmd_paramcount(pc);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::out_of_range& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    // DataError, FormatError, DimensionError, training divergence, I/O.
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
