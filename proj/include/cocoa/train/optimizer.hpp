#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cocoa/autodiff/parameter.hpp"

namespace cocoa::train {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected adaptive-moment updates. Moment buffers and the step count
// live in a ParameterSet of non-trainable entries so they can be
// checkpointed next to the model.
class Adam {
 public:
  Adam(std::vector<ad::Parameter*> params, AdamConfig config, const std::string& name = "adam");

  // Applies one update from each parameter's grad buffer.
  void step();
  void zero_grad();

  std::uint64_t steps() const;
  const AdamConfig& config() const { return config_; }
  ad::ParameterSet& state() { return state_; }
  const ad::ParameterSet& state() const { return state_; }

 private:
  std::vector<ad::Parameter*> params_;
  AdamConfig config_;
  ad::ParameterSet state_;
  std::vector<ad::Parameter*> m_, v_;
  ad::Parameter* step_ = nullptr;
};

}  // namespace cocoa::train
