// SPDX-License-Identifier: Apache-2.0
//
// Self-checks runnable outside the unit-test framework: analytical Jacobian
// against finite differences, loss gradients against finite differences,
// controller reduction identities, metric oracles and invariant sweeps.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "shapectl/controller.hpp"

namespace shapectl {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

/// PHY from uniform q = 70 on the zero-disturbance plant, Easy target.
CheckResult check_kinematics_exactness(int steps = 200, double tol_mm = 0.5);
CheckResult check_jacobian_suite(int n_configs = 200, double rel_tol = 1e-5, std::uint64_t seed = 14);
/// Full loss gradient at widths h = 8, H = 16.
CheckResult check_gradient_suite(int n_samples = 20, double rel_tol = 1e-4, std::uint64_t seed = 8);
/// Forced gates reproduce the baselines bit for bit. `model` may be null, in
/// which case an untrained network is used.
CheckResult check_reduction_identities(std::shared_ptr<const DisplacementModel> model = nullptr);
CheckResult check_metric_oracles();
CheckResult check_fusion_convexity(int trials = 200, std::uint64_t seed = 3);
CheckResult check_dls_monotonicity(int trials = 50, std::uint64_t seed = 4);
CheckResult check_planner_invariants(int trials = 20, std::uint64_t seed = 5);
CheckResult check_plant_feasibility(int steps = 300, std::uint64_t seed = 6);

/// Everything above with default arguments.
std::vector<CheckResult> run_invariant_suite();

}  // namespace shapectl
