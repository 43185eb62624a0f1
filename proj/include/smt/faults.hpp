// SPDX-License-Identifier: Apache-2.0
//
// Deliberate defects that `smt verify --inject` switches on to show that the
// named checks catch them. Never enabled outside that command.
#pragma once

#include <optional>
#include <string>
#include <vector>

namespace smt {

enum class Fault {
  none,
  unnormalized_softmax,      // softmax skips the division by the row sum
  adamw_no_bias_correction,  // AdamW uses raw first/second moments
  unnormalized_blend,        // sliding window skips the division by summed importance
};

void inject_fault(Fault f);
Fault active_fault();
std::string fault_name(Fault f);
std::optional<Fault> parse_fault(const std::string& name);
std::vector<Fault> all_faults();

}  // namespace smt
