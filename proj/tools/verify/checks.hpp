// SPDX-License-Identifier: Apache-2.0
//
// Named invariant checks shared by `smt verify` and the acceptance runner.
#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace smt::verify {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

struct Check {
  std::string name;
  bool fast = true;  // part of `verify --fast`
  std::function<std::string()> body;  // throws CheckFailure (or anything) on failure, returns a detail line
};

class CheckFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<Check> all_checks();
const Check& find_check(const std::string& name);
CheckResult run_check(const Check& c);

}  // namespace smt::verify
