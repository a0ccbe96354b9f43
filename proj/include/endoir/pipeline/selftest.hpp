#pragma once

#include <string>
#include <vector>

namespace endoir::pipeline {

struct SuiteResult {
  std::string name;
  bool passed = true;
  int checks = 0;
  double seconds = 0.0;
  std::vector<std::string> failures;  // one entry per failed check, naming it
};

// gradient, fft, routing, schedule, oracles
const std::vector<std::string>& selftest_suites();

// Runs the named suites (all when empty). Unknown names throw ValueError.
std::vector<SuiteResult> run_selftest(const std::vector<std::string>& suites = {});

}  // namespace endoir::pipeline
