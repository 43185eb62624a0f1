// SPDX-License-Identifier: Apache-2.0
//
// AdamW, warm-up cosine schedule, the training loop and checkpoints.
#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "smt/inference.hpp"
#include "smt/losses.hpp"
#include "smt/model.hpp"
#include "smt/phantom.hpp"

namespace smt {

struct AdamWConfig {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 1e-5;
};

template <typename T>
struct AdamWState {
  std::vector<Tensor<T>> m, v;  // one pair per parameter, same order
  std::int64_t t = 0;           // completed updates
};

// Decoupled decay (w -= lr*wd*w) followed by the bias-corrected Adam update.
// Parameters without a gradient buffer are treated as having zero gradient.
template <typename T>
void adamw_step(std::vector<Tensor<T>>& params, AdamWState<T>& state, double lr, const AdamWConfig& cfg);

// Linear 0 -> base over [0, warmup], cosine base -> 0 over [warmup, total].
double warmup_cosine_lr(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps, double base_lr);

struct TrainConfig {
  std::int64_t epochs = 50;
  std::int64_t steps_per_epoch = 40;
  double lr = 1e-4;
  double weight_decay = 1e-5;
  double warmup_fraction = 0.05;
  std::int64_t batch_size = 1;
  std::uint64_t seed = 0;
  bool deterministic = true;
  std::int64_t eval_interval = 0;  // steps between evaluations; 0 disables
  bool augment = true;
  double foreground_prob = 0.5;
  double overlap = 0.5;            // sliding window overlap used for evaluation
  LossConfig loss;

  std::int64_t total_steps() const { return epochs * steps_per_epoch; }
  std::int64_t warmup_steps() const;
  void validate() const;
  bool operator==(const TrainConfig& o) const;
};

// Synthetic data set description. Images are HU-scaled to [0, 1].
struct DataConfig {
  std::int64_t phantom_side = 64;
  std::int64_t train_count = 16;
  std::int64_t val_count = 2;
  std::int64_t test_count = 8;
  std::uint64_t seed = 1000;  // phantom i of a split uses seed + offset + i
  double noise_sigma = 20.0;

  void validate() const;
  bool operator==(const DataConfig&) const = default;
};

struct TrainData {
  std::vector<Phantom> train, val;
};

enum class Split { train, val, test };
// Generated and HU-scaled phantoms of one split; splits never share seeds.
std::vector<Phantom> make_phantoms(const DataConfig& cfg, Split split);
TrainData make_train_data(const DataConfig& cfg);

struct StepMetrics {
  std::int64_t step = 0;  // 1-based index of the completed update
  double loss = 0, dice = 0, ce = 0, lr = 0, grad_norm = 0;
  double eval_dsc = std::numeric_limits<double>::quiet_NaN();
};

template <typename T>
struct TrainState {
  std::int64_t step = 0;
  AdamWState<T> opt;
  double best_dsc = std::numeric_limits<double>::quiet_NaN();
  std::int64_t best_step = -1;
  std::vector<StepMetrics> history;  // this session only; not checkpointed
};

// Raised when the loss or gradient norm stops being finite.
class TrainingDiverged : public DataError {
 public:
  using DataError::DataError;
};

using StepLogger = std::function<void(const StepMetrics&)>;
template <typename T> using BestHook = std::function<void(SwinSMT<T>&, const TrainState<T>&)>;

// Runs updates until state.step reaches `stop_at` (or the configured total
// when negative). Crops and augmentations for step s, sample b come from a
// generator seeded with (cfg.seed, s, b), so a resumed run replays exactly.
template <typename T>
void train_loop(SwinSMT<T>& model, const TrainData& data, const TrainConfig& cfg, TrainState<T>& state,
                std::int64_t stop_at = -1, const StepLogger& log = {}, const BestHook<T>& on_best = {});

struct EvalReport {
  double mean_dsc = 0;                 // mean over volumes of their mean foreground DSC
  std::vector<double> per_class;       // averaged over volumes where scored, NaN if never
  std::vector<double> per_volume;
};

template <typename T>
EvalReport evaluate(const SwinSMT<T>& model, const std::vector<Phantom>& volumes, double overlap = 0.5);

// Checkpoint: ASCII manifest (format line, model and train config as JSON,
// one line per tensor with shape and byte offset) then little-endian f32
// payload. Optimizer moments are stored as "opt.m/<name>" and "opt.v/<name>".
template <typename T>
std::string encode_checkpoint(SwinSMT<T>& model, const TrainState<T>* state = nullptr, const TrainConfig* train = nullptr);
// Reads the model configuration stored in a checkpoint.
SwinSMTConfig checkpoint_model_config(const std::string& bytes);
// Training configuration stored alongside, if any.
std::optional<TrainConfig> checkpoint_train_config(const std::string& bytes);
// ConfigError when the stored configuration differs from the model's,
// DimensionError on shape mismatch, FormatError on a damaged file.
template <typename T>
void decode_checkpoint(const std::string& bytes, SwinSMT<T>& model, TrainState<T>* state = nullptr);

template <typename T>
void save_checkpoint(const std::string& path, SwinSMT<T>& model, const TrainState<T>* state = nullptr,
                     const TrainConfig* train = nullptr);
template <typename T>
void load_checkpoint(const std::string& path, SwinSMT<T>& model, TrainState<T>* state = nullptr);
std::string read_file_bytes(const std::string& path);

}  // namespace smt
