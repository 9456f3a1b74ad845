#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "rvae/layers.hpp"

namespace rvae {

struct AdamConfig {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias-corrected moments:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   theta <- theta - a * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamConfig config) : config_(config) {}

  /// Descent step on every parameter that has a gradient entry.
  void minimize(ParamSet& params, const ParamSet& grads);
  /// Ascent step (used for maximising free energies).
  void maximize(ParamSet& params, const ParamSet& grads);

  const AdamConfig& config() const { return config_; }
  void set_step_size(double alpha) { config_.step_size = alpha; }
  std::uint64_t steps() const { return steps_; }
  const Tensor& first_moment(const std::string& name) const { return first_.at(name); }
  const Tensor& second_moment(const std::string& name) const { return second_.at(name); }

 private:
  void step(ParamSet& params, const ParamSet& grads, double sign);

  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Tensor> first_;
  std::map<std::string, Tensor> second_;
};

}  // namespace rvae
