#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cocoa/autodiff/parameter.hpp"
#include "cocoa/autodiff/tape.hpp"

namespace cocoa::ad {

struct GradCheckOptions {
  double step = 1e-4;        // central-difference half width h
  double tolerance = 1e-4;   // max relative error allowed
  // Relative error is |a - n| / max(|a|, |n|, denominator_floor). Below the
  // floor the O(h^2) truncation error of the probe dominates the ratio.
  double denominator_floor = 1e-4;
  // 0 checks every coordinate; otherwise a deterministic random subset per parameter.
  std::size_t max_coords_per_parameter = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckReport {
  bool passed = true;
  double max_relative_error = 0.0;
  GradCheckEntry worst;
  std::size_t checked = 0;
  // Coordinates whose +-h probe moved some relu/hinge input across its kink.
  std::size_t skipped_at_kinks = 0;
  std::vector<GradCheckEntry> failures;  // first few offenders

  std::string summary() const;
};

using LossFn = std::function<Var(Tape&)>;

// Compares reverse-mode gradients of a scalar loss with central finite
// differences for every coordinate of the given parameters. fn must be a
// deterministic function of the parameter values (use batch-eval BN).
GradCheckReport grad_check(const LossFn& fn, std::span<Parameter* const> params, const GradCheckOptions& options = {});

}  // namespace cocoa::ad
