#pragma once

#include <cstdint>

#include "json.hpp"

namespace cocoa::train {

struct Stage1Config {
  double lr = 1e-3;
  int epochs = 30;
  int batch = 64;
  double lambda_rot = 0.5;
};

struct Stage2Config {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int epochs = 200;
  int batch = 128;
  double lambda_g = 0.1;
  int d_steps = 1;  // discriminator updates per generator update
};

struct Stage3Config {
  double lr = 1e-3;
  int epochs = 20;
  int batch = 64;
};

struct TrainConfig {
  Stage1Config stage1;
  Stage2Config stage2;
  Stage3Config stage3;
  std::uint64_t seed = 0;

  // Throws ConfigurationError on non-positive rates, counts or batch sizes
  // and on negative loss weights.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace cocoa::train
