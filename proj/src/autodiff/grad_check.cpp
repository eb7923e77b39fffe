#include "cocoa/autodiff/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "cocoa/errors.hpp"

namespace cocoa::ad {
namespace {

struct Probe {
  double loss;
  std::uint64_t signature;
};

Probe evaluate(const LossFn& fn) {
  Tape t;
  t.set_track_kinks(true);
  const Var loss = fn(t);
  const Tensor& v = t.value(loss);
  if (v.numel() != 1) throw DimensionError("grad_check: loss must be scalar, got " + shape_string(v.shape()));
  if (!std::isfinite(v[0])) throw NumericError("grad_check: non-finite loss");
  return {v[0], t.kink_signature()};
}

}  // namespace

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " max_rel_err=" << max_relative_error << " checked=" << checked
     << " skipped_at_kinks=" << skipped_at_kinks;
  if (checked) {
    os << " worst=" << worst.parameter << "[" << worst.index << "] analytic=" << worst.analytic
       << " numeric=" << worst.numeric;
  }
  return os.str();
}

GradCheckReport grad_check(const LossFn& fn, std::span<Parameter* const> params, const GradCheckOptions& options) {
  if (!(options.step >= 1e-6 && options.step <= 1e-3)) {
    throw ValidationError("grad_check: step must lie in [1e-6, 1e-3]");
  }
  for (Parameter* p : params) p->grad.fill(0.0);

  std::uint64_t base_signature = 0;
  {
    Tape t;
    t.set_track_kinks(true);
    const Var loss = fn(t);
    if (t.value(loss).numel() != 1) throw DimensionError("grad_check: loss must be scalar");
    if (!std::isfinite(t.value(loss)[0])) throw NumericError("grad_check: non-finite loss");
    base_signature = t.kink_signature();
    t.backward(loss);
  }

  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  for (Parameter* p : params) {
    const Tensor analytic = p->grad;
    std::vector<std::size_t> coords(p->value.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_parameter && coords.size() > options.max_coords_per_parameter) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_parameter);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + options.step;
      const Probe plus = evaluate(fn);
      p->value[i] = saved - options.step;
      const Probe minus = evaluate(fn);
      p->value[i] = saved;
      if (plus.signature != base_signature || minus.signature != base_signature) {
        ++report.skipped_at_kinks;
        continue;
      }
      const double numeric = (plus.loss - minus.loss) / (2.0 * options.step);
      const double a = analytic[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denominator_floor});
      const double rel = std::abs(a - numeric) / denom;
      GradCheckEntry entry{p->name, i, a, numeric, rel};
      ++report.checked;
      if (report.checked == 1 || rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst = entry;
      }
      if (!(rel < options.tolerance)) {
        report.passed = false;
        if (report.failures.size() < 8) report.failures.push_back(entry);
      }
    }
  }
  // Leave gradients as the analytic result of the unperturbed loss.
  return report;
}

}  // namespace cocoa::ad
