#pragma once

#include <map>
#include <string>
#include <vector>

#include "normlab/config.hpp"
#include "normlab/trainer.hpp"

namespace normlab {

struct ArmResult {
  std::string name;
  RunResult run;
  bool degraded = false;  // half-precision experiment: trails its F32 twin
};

struct ExperimentSummary {
  std::string name;
  std::vector<ArmResult> arms;
  std::map<std::string, double> metrics;
  std::vector<std::string> files;  // everything written under out_dir
};

// Runs one named multi-arm experiment and writes one CSV per arm plus a
// summary CSV under out_dir. Arms share the base config's seed, so their
// initial parameters and data order are identical. Divergence in one arm is
// recorded and does not abort the others.
//
// Names: wd-equivalence, norm-schedule, constants, claim, half-precision,
// bwn-invariance, lp-compare.
ExperimentSummary run_experiment(const std::string& name, const ExperimentConfig& cfg,
                                 const std::string& out_dir);

}  // namespace normlab
