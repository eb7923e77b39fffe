#include "cocoa/train/optimizer.hpp"

#include <cmath>

#include "cocoa/errors.hpp"

namespace cocoa::train {

Adam::Adam(std::vector<ad::Parameter*> params, AdamConfig config, const std::string& name)
    : params_(std::move(params)), config_(config) {
  if (!(config_.lr > 0.0) || !(config_.beta1 >= 0.0 && config_.beta1 < 1.0) ||
      !(config_.beta2 >= 0.0 && config_.beta2 < 1.0) || !(config_.eps > 0.0)) {
    throw ConfigurationError("adam: lr and eps must be positive, betas in [0,1)");
  }
  for (auto* p : params_) {
    m_.push_back(&state_.add(name + ".m." + p->name, ad::Tensor(p->value.shape(), 0.0), false));
    v_.push_back(&state_.add(name + ".v." + p->name, ad::Tensor(p->value.shape(), 0.0), false));
  }
  step_ = &state_.add(name + ".step", ad::Tensor({1}, 0.0), false);
}

std::uint64_t Adam::steps() const { return static_cast<std::uint64_t>(step_->value[0]); }

void Adam::zero_grad() {
  for (auto* p : params_) p->grad.fill(0.0);
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = *params_[i];
    if (p.grad.shape() != p.value.shape() || m_[i]->value.shape() != p.value.shape()) {
      throw DimensionError("adam: gradient " + ad::shape_string(p.grad.shape()) + " does not match parameter '" +
                           p.name + "' " + ad::shape_string(p.value.shape()));
    }
  }
  const double t = step_->value[0] + 1.0;
  step_->value[0] = t;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, t);
  const double c2 = 1.0 - std::pow(b2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& w = params_[i]->value.storage();
    const auto& g = params_[i]->grad.storage();
    auto& m = m_[i]->value.storage();
    auto& v = v_[i]->value.storage();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace cocoa::train
