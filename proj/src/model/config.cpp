// SPDX-License-Identifier: Apache-2.0
#include "smt/config.hpp"

#include <sstream>

#include "smt/errors.hpp"

namespace smt {

SwinSMTConfig SwinSMTConfig::toy() { return SwinSMTConfig{}; }

SwinSMTConfig SwinSMTConfig::full() {
  SwinSMTConfig c;
  c.patch_size = 128;
  c.embed_dim = 48;
  c.window_size = 7;
  c.experts = {0, 32, 32, 32};
  c.num_classes = 117;
  return c;
}

SwinSMTConfig SwinSMTConfig::tiny() {
  SwinSMTConfig c;
  c.patch_size = 32;
  c.embed_dim = 4;
  c.depths = {1, 1, 1, 1};
  c.num_heads = {1, 1, 2, 2};
  c.window_size = 2;
  c.experts = {0, 2, 2, 2};
  c.num_classes = 2;
  return c;
}

void SwinSMTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid model config: " + msg); };
  if (in_channels < 1) fail("in_channels must be positive");
  if (embed_dim < 1) fail("embed_dim must be positive");
  if (window_size < 1) fail("window_size must be positive");
  if (num_classes < 1) fail("num_classes must be positive");
  if (mlp_ratio < 1) fail("mlp_ratio must be positive");
  // Stem halves the grid and every stage ends with a 2x merge, so the
  // bottleneck sits at p/32.
  if (patch_size < 32 || patch_size % 32 != 0) {
    fail("patch_size " + std::to_string(patch_size) + " must be a positive multiple of 32 (stem plus four merges)");
  }
  if (experts[0] != 0) fail("stage 1 cannot use Soft MoE");
  for (int s = 1; s <= kNumStages; ++s) {
    const auto i = static_cast<std::size_t>(s - 1);
    const auto tag = "stage " + std::to_string(s) + ": ";
    if (depths[i] < 0) fail(tag + "depth must be >= 0");
    if (num_heads[i] < 1 || stage_dim(s) % num_heads[i] != 0) {
      fail(tag + std::to_string(num_heads[i]) + " heads do not divide width " + std::to_string(stage_dim(s)));
    }
    if (experts[i] < 0) fail(tag + "expert count must be >= 0");
    if (experts[i] > 0 && stage_tokens(s) % experts[i] != 0) {
      fail(tag + std::to_string(experts[i]) + " experts do not divide " + std::to_string(stage_tokens(s)) +
           " tokens");
    }
  }
}

std::string describe(const SwinSMTConfig& c) {
  std::ostringstream os;
  os << "p=" << c.patch_size << " C=" << c.in_channels << " d0=" << c.embed_dim << " w=" << c.window_size
     << " K=" << c.num_classes << " depths=(";
  for (int i = 0; i < kNumStages; ++i) os << (i ? "," : "") << c.depths[i];
  os << ") heads=(";
  for (int i = 0; i < kNumStages; ++i) os << (i ? "," : "") << c.num_heads[i];
  os << ") experts=(";
  for (int i = 0; i < kNumStages; ++i) {
    os << (i ? "," : "");
    if (c.experts[i] > 0) os << c.experts[i];
    else os << "none";
  }
  os << ")";
  return os.str();
}

}  // namespace smt
