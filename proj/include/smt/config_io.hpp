// SPDX-License-Identifier: Apache-2.0
//
// JSON form of every configuration struct. Readers reject unknown keys and
// wrongly typed values with ConfigError; missing keys keep their defaults.
#pragma once

#include <string>

#include "json.hpp"
#include "smt/config.hpp"
#include "smt/inference.hpp"
#include "smt/train.hpp"

namespace smt {

using Json = nlohmann::ordered_json;

Json to_json(const SwinSMTConfig& c);
Json to_json(const LossConfig& c);
Json to_json(const TrainConfig& c);
Json to_json(const DataConfig& c);
Json to_json(const SlidingWindowConfig& c);

// `base` supplies values for keys the object leaves out.
SwinSMTConfig model_config_from_json(const Json& j, const SwinSMTConfig& base = SwinSMTConfig::toy());
LossConfig loss_config_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);
DataConfig data_config_from_json(const Json& j);
SlidingWindowConfig window_config_from_json(const Json& j);

// Run file: {"model": ..., "train": ..., "data": ..., "inference": ...}.
// The model section may name a profile ("toy", "tiny", "full") to start from.
struct RunConfig {
  SwinSMTConfig model = SwinSMTConfig::toy();
  TrainConfig train;
  DataConfig data;
  SlidingWindowConfig inference;

  void validate() const;
  bool operator==(const RunConfig& o) const;
};

Json to_json(const RunConfig& c);
RunConfig run_config_from_json(const Json& j);
// FormatError on malformed JSON, ConfigError on bad keys or values.
RunConfig parse_run_config(const std::string& text);
std::string serialize_run_config(const RunConfig& c);
RunConfig load_run_config(const std::string& path);

}  // namespace smt
