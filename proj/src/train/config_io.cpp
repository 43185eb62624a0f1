// SPDX-License-Identifier: Apache-2.0
#include "smt/config_io.hpp"

#include <fstream>
#include <iterator>
#include <set>

namespace smt {

namespace {

// Pulls typed fields out of one JSON object and remembers which keys were used.
class Fields {
 public:
  Fields(const Json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j.is_object()) throw ConfigError(section_ + ": expected an object");
  }

  template <typename V>
  void get(const char* key, V& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<V, bool>) {
        if (!it->is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<V>) {
        if (!it->is_number_integer()) throw ConfigError("");
        if constexpr (std::is_unsigned_v<V>) {
          if (it->is_number_unsigned() == false && it->template get<std::int64_t>() < 0) throw ConfigError("");
        }
      } else if constexpr (std::is_floating_point_v<V>) {
        if (!it->is_number()) throw ConfigError("");
      }
      out = it->template get<V>();
    } catch (const std::exception&) {
      throw ConfigError(section_ + "." + key + ": wrong type (" + it->dump() + ")");
    }
  }

  const Json* raw(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(section_ + ": unknown key '" + it.key() + "'");
    }
  }

  const std::string& section() const { return section_; }

 private:
  const Json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

std::array<std::int64_t, kNumStages> int_array(const Json& j, const std::string& where, bool allow_none) {
  if (!j.is_array() || j.size() != kNumStages) throw ConfigError(where + ": expected an array of 4 entries");
  std::array<std::int64_t, kNumStages> out{};
  for (std::size_t i = 0; i < kNumStages; ++i) {
    if (allow_none && j[i].is_string() && j[i].get<std::string>() == "none") {
      out[i] = 0;
    } else if (j[i].is_number_integer()) {
      out[i] = j[i].get<std::int64_t>();
    } else {
      throw ConfigError(where + ": entry " + std::to_string(i) + " must be an integer" + (allow_none ? " or \"none\"" : ""));
    }
  }
  return out;
}

}  // namespace

Json to_json(const SwinSMTConfig& c) {
  Json experts = Json::array();
  for (auto n : c.experts) experts.push_back(n > 0 ? Json(n) : Json("none"));
  return Json{{"in_channels", c.in_channels},
              {"patch_size", c.patch_size},
              {"embed_dim", c.embed_dim},
              {"depths", c.depths},
              {"num_heads", c.num_heads},
              {"window_size", c.window_size},
              {"experts", experts},
              {"num_classes", c.num_classes},
              {"mlp_ratio", c.mlp_ratio},
              {"moe_normalize_logits", c.moe_normalize_logits}};
}

SwinSMTConfig model_config_from_json(const Json& j, const SwinSMTConfig& base) {
  Fields f(j, "model");
  SwinSMTConfig c = base;
  if (const auto* p = f.raw("profile")) {
    const auto name = p->is_string() ? p->get<std::string>() : std::string();
    if (name == "toy") c = SwinSMTConfig::toy();
    else if (name == "tiny") c = SwinSMTConfig::tiny();
    else if (name == "full") c = SwinSMTConfig::full();
    else throw ConfigError("model.profile: expected \"toy\", \"tiny\" or \"full\"");
  }
  f.get("in_channels", c.in_channels);
  f.get("patch_size", c.patch_size);
  f.get("embed_dim", c.embed_dim);
  if (const auto* p = f.raw("depths")) c.depths = int_array(*p, "model.depths", false);
  if (const auto* p = f.raw("num_heads")) c.num_heads = int_array(*p, "model.num_heads", false);
  f.get("window_size", c.window_size);
  if (const auto* p = f.raw("experts")) c.experts = int_array(*p, "model.experts", true);
  f.get("num_classes", c.num_classes);
  f.get("mlp_ratio", c.mlp_ratio);
  f.get("moe_normalize_logits", c.moe_normalize_logits);
  f.finish();
  return c;
}

Json to_json(const LossConfig& c) {
  return Json{{"lambda", c.lambda}, {"dice_eps", c.dice_eps}, {"include_background_in_dice", c.include_background_in_dice}};
}

LossConfig loss_config_from_json(const Json& j) {
  Fields f(j, "train.loss");
  LossConfig c;
  f.get("lambda", c.lambda);
  f.get("dice_eps", c.dice_eps);
  f.get("include_background_in_dice", c.include_background_in_dice);
  f.finish();
  return c;
}

Json to_json(const TrainConfig& c) {
  return Json{{"epochs", c.epochs},
              {"steps_per_epoch", c.steps_per_epoch},
              {"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"warmup_fraction", c.warmup_fraction},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"deterministic", c.deterministic},
              {"eval_interval", c.eval_interval},
              {"augment", c.augment},
              {"foreground_prob", c.foreground_prob},
              {"overlap", c.overlap},
              {"loss", to_json(c.loss)}};
}

TrainConfig train_config_from_json(const Json& j) {
  Fields f(j, "train");
  TrainConfig c;
  f.get("epochs", c.epochs);
  f.get("steps_per_epoch", c.steps_per_epoch);
  f.get("lr", c.lr);
  f.get("weight_decay", c.weight_decay);
  f.get("warmup_fraction", c.warmup_fraction);
  f.get("batch_size", c.batch_size);
  f.get("seed", c.seed);
  f.get("deterministic", c.deterministic);
  f.get("eval_interval", c.eval_interval);
  f.get("augment", c.augment);
  f.get("foreground_prob", c.foreground_prob);
  f.get("overlap", c.overlap);
  if (const auto* p = f.raw("loss")) c.loss = loss_config_from_json(*p);
  f.finish();
  return c;
}

Json to_json(const DataConfig& c) {
  return Json{{"phantom_side", c.phantom_side}, {"train_count", c.train_count}, {"val_count", c.val_count},
              {"test_count", c.test_count},     {"seed", c.seed},               {"noise_sigma", c.noise_sigma}};
}

DataConfig data_config_from_json(const Json& j) {
  Fields f(j, "data");
  DataConfig c;
  f.get("phantom_side", c.phantom_side);
  f.get("train_count", c.train_count);
  f.get("val_count", c.val_count);
  f.get("test_count", c.test_count);
  f.get("seed", c.seed);
  f.get("noise_sigma", c.noise_sigma);
  f.finish();
  return c;
}

Json to_json(const SlidingWindowConfig& c) {
  return Json{{"roi", c.roi},
              {"overlap", c.overlap},
              {"sigma_scale", c.sigma_scale},
              {"blend", c.mode == BlendMode::gaussian ? "gaussian" : "constant"}};
}

SlidingWindowConfig window_config_from_json(const Json& j) {
  Fields f(j, "inference");
  SlidingWindowConfig c;
  f.get("roi", c.roi);
  f.get("overlap", c.overlap);
  f.get("sigma_scale", c.sigma_scale);
  if (const auto* p = f.raw("blend")) {
    const auto name = p->is_string() ? p->get<std::string>() : std::string();
    if (name == "gaussian") c.mode = BlendMode::gaussian;
    else if (name == "constant") c.mode = BlendMode::constant;
    else throw ConfigError("inference.blend: expected \"gaussian\" or \"constant\"");
  }
  f.finish();
  return c;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
  inference.validate();
  if (inference.roi != model.patch_size) {
    throw ConfigError("inference.roi (" + std::to_string(inference.roi) + ") must equal model.patch_size (" +
                      std::to_string(model.patch_size) + ")");
  }
}

bool RunConfig::operator==(const RunConfig& o) const {
  return model == o.model && train == o.train && data == o.data && inference.roi == o.inference.roi &&
         inference.overlap == o.inference.overlap && inference.sigma_scale == o.inference.sigma_scale &&
         inference.mode == o.inference.mode;
}

Json to_json(const RunConfig& c) {
  return Json{{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"data", to_json(c.data)}, {"inference", to_json(c.inference)}};
}

RunConfig run_config_from_json(const Json& j) {
  Fields f(j, "run config");
  RunConfig c;
  if (const auto* p = f.raw("model")) c.model = model_config_from_json(*p);
  if (const auto* p = f.raw("train")) c.train = train_config_from_json(*p);
  if (const auto* p = f.raw("data")) c.data = data_config_from_json(*p);
  if (const auto* p = f.raw("inference")) c.inference = window_config_from_json(*p);
  else c.inference.roi = c.model.patch_size;
  f.finish();
  c.validate();
  return c;
}

RunConfig parse_run_config(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw FormatError(std::string("run config is not valid JSON: ") + e.what());
  }
  return run_config_from_json(j);
}

std::string serialize_run_config(const RunConfig& c) { return to_json(c).dump(2) + "\n"; }

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open run config " + path);
  return parse_run_config(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
}

}  // namespace smt
