// SPDX-License-Identifier: Apache-2.0
#include "smt/faults.hpp"

#include <atomic>

namespace smt {

namespace {
std::atomic<Fault> g_fault{Fault::none};
}

void inject_fault(Fault f) { g_fault.store(f, std::memory_order_relaxed); }
Fault active_fault() { return g_fault.load(std::memory_order_relaxed); }

std::string fault_name(Fault f) {
  switch (f) {
    case Fault::none: return "none";
    case Fault::unnormalized_softmax: return "unnormalized-softmax";
    case Fault::adamw_no_bias_correction: return "adamw-no-bias-correction";
    case Fault::unnormalized_blend: return "unnormalized-blend";
  }
  return "none";
}

std::vector<Fault> all_faults() {
  return {Fault::unnormalized_softmax, Fault::adamw_no_bias_correction, Fault::unnormalized_blend};
}

std::optional<Fault> parse_fault(const std::string& name) {
  for (auto f : all_faults()) {
    if (fault_name(f) == name) return f;
  }
  if (name == "none") return Fault::none;
  return std::nullopt;
}

}  // namespace smt
