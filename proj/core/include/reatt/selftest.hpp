#pragma once

#include <string>
#include <vector>

namespace reatt {

struct SelfTestResult {
  std::string name;
  bool passed = false;
  std::string detail;  // empty when passed
};

// Fast oracle and property checks over the numeric core: activation and
// pooling oracles, the LSTM recurrence, reward arithmetic, substitution
// idempotence, a finite-difference gradient probe, schedule round-robin,
// and metric serialization. Runs in a few seconds on one core.
std::vector<SelfTestResult> run_selftests();

}  // namespace reatt
