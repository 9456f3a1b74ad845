#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rvae/layers.hpp"

namespace rvae {

/// Outcome of one property check over many random instances.
struct CheckResult {
  std::string name;
  double worst = 0.0;  // worst observed error statistic
  double tolerance = 0.0;
  std::size_t cases = 0;
  bool passed = false;
  std::string detail;
};

/// Central-difference check of `analytic` against `loss` on up to `per_tensor`
/// random entries of every tensor. The error of one entry is
/// |a - n| / max(|a|, |n|, abs_floor). Returns the largest one.
double max_gradient_error(const std::function<double(const ParamSet&)>& loss, ParamSet point,
                          const ParamSet& analytic, std::mt19937_64& rng, std::size_t per_tensor = 6,
                          double step = 1e-5, double abs_floor = 1e-6);

struct GradcheckOptions {
  std::size_t seeds = 20;
  std::uint64_t base_seed = 1;
  double layer_tolerance = 1e-4;
  double model_tolerance = 1e-3;
};

/// Dense, LSTM, BiLSTM, masked LSTM, the training free energy of every
/// variant, the test-time (mixture) free energy and the PEEM objective.
std::vector<CheckResult> gradient_suite(const GradcheckOptions& opts = {});

/// Random multiplicative M-step sweeps; the statistic is the largest relative
/// increase of C(phi) over all sweeps.
CheckResult mstep_monotonicity(std::size_t trials, std::size_t sweeps, std::uint64_t seed,
                               double slack = 1e-9);

/// With V_x = |X|^2 every sweep must leave phi unchanged.
CheckResult mstep_fixed_point(std::size_t trials, std::uint64_t seed, double tolerance = 1e-12);

}  // namespace rvae
