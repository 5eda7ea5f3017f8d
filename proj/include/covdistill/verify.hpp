#pragma once

#include <string>
#include <vector>

#include "covdistill/experiment.hpp"

namespace covdistill {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  bool operator==(const CheckResult&) const = default;
};

struct VerifyOptions {
  std::size_t calibration_scenes = 50000;
  std::size_t metric_cases = 200;
  std::size_t invariance_cases = 100;
  std::uint64_t seed = 5;
};

/// Fast property suite: gradient checks, metric oracle equivalence, teacher
/// calibration, softmax/masking invariants and checkpoint round trip.
std::vector<CheckResult> run_verify(const ExperimentConfig& cfg, const VerifyOptions& opts = {});

/// Aligned pass/fail table. Holds no timings, so repeated runs print the
/// same text.
std::string render_checks(const std::vector<CheckResult>& checks);

}  // namespace covdistill
