#include "cocoa/train/config.hpp"

#include <set>
#include <string>

#include "cocoa/errors.hpp"

namespace cocoa::train {
namespace {

using nlohmann::json;

template <class T>
void read(const json& j, const char* key, T& out, std::set<std::string>& seen) {
  seen.insert(key);
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, const std::set<std::string>& seen, const std::string& where) {
  for (const auto& [k, v] : j.items()) {
    if (!seen.count(k)) throw ConfigurationError("unknown config key '" + where + k + "'");
  }
}

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ConfigurationError(std::string("config key '") + key + "' must be an object");
  return j.at(key);
}

}  // namespace

void TrainConfig::validate() const {
  auto positive = [](double v, const char* what) {
    if (!(v > 0.0)) throw ConfigurationError(std::string(what) + " must be positive");
  };
  auto non_negative = [](double v, const char* what) {
    if (!(v >= 0.0)) throw ConfigurationError(std::string(what) + " must be non-negative");
  };
  auto at_least_two = [](int v, const char* what) {
    if (v < 2) throw ConfigurationError(std::string(what) + " must be at least 2");
  };
  auto beta = [](double v, const char* what) {
    if (!(v >= 0.0 && v < 1.0)) throw ConfigurationError(std::string(what) + " must lie in [0,1)");
  };
  positive(stage1.lr, "stage1.lr");
  positive(stage1.epochs, "stage1.epochs");
  at_least_two(stage1.batch, "stage1.batch");
  non_negative(stage1.lambda_rot, "stage1.lambda_rot");
  positive(stage2.lr, "stage2.lr");
  beta(stage2.beta1, "stage2.beta1");
  beta(stage2.beta2, "stage2.beta2");
  positive(stage2.epochs, "stage2.epochs");
  at_least_two(stage2.batch, "stage2.batch");
  non_negative(stage2.lambda_g, "stage2.lambda_g");
  positive(stage2.d_steps, "stage2.d_steps");
  positive(stage3.lr, "stage3.lr");
  positive(stage3.epochs, "stage3.epochs");
  positive(stage3.batch, "stage3.batch");
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"seed", c.seed},
       {"stage1",
        {{"lr", c.stage1.lr}, {"epochs", c.stage1.epochs}, {"batch", c.stage1.batch},
         {"lambda_rot", c.stage1.lambda_rot}}},
       {"stage2",
        {{"lr", c.stage2.lr}, {"beta1", c.stage2.beta1}, {"beta2", c.stage2.beta2}, {"epochs", c.stage2.epochs},
         {"batch", c.stage2.batch}, {"lambda_g", c.stage2.lambda_g}, {"d_steps", c.stage2.d_steps}}},
       {"stage3", {{"lr", c.stage3.lr}, {"epochs", c.stage3.epochs}, {"batch", c.stage3.batch}}}};
}

void from_json(const json& j, TrainConfig& c) {
  if (!j.is_object()) throw ConfigurationError("train config must be a JSON object");
  std::set<std::string> top, s1, s2, s3;
  read(j, "seed", c.seed, top);
  top.insert({"stage1", "stage2", "stage3"});
  reject_unknown(j, top, "");
  const json& a = section(j, "stage1");
  read(a, "lr", c.stage1.lr, s1);
  read(a, "epochs", c.stage1.epochs, s1);
  read(a, "batch", c.stage1.batch, s1);
  read(a, "lambda_rot", c.stage1.lambda_rot, s1);
  reject_unknown(a, s1, "stage1.");
  const json& b = section(j, "stage2");
  read(b, "lr", c.stage2.lr, s2);
  read(b, "beta1", c.stage2.beta1, s2);
  read(b, "beta2", c.stage2.beta2, s2);
  read(b, "epochs", c.stage2.epochs, s2);
  read(b, "batch", c.stage2.batch, s2);
  read(b, "lambda_g", c.stage2.lambda_g, s2);
  read(b, "d_steps", c.stage2.d_steps, s2);
  reject_unknown(b, s2, "stage2.");
  const json& d = section(j, "stage3");
  read(d, "lr", c.stage3.lr, s3);
  read(d, "epochs", c.stage3.epochs, s3);
  read(d, "batch", c.stage3.batch, s3);
  reject_unknown(d, s3, "stage3.");
  c.validate();
}

}  // namespace cocoa::train
