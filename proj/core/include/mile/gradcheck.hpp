#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mile/losses.hpp"

namespace mile {

/// Loss of one token evaluated in extended precision, independently of the
/// double-precision kernels. With `frozen_factor` set the scaling factor is
/// held at that value (the detached mode's forward as seen by the gradient).
long double reference_token_loss(std::span<const long double> logits, std::size_t target, const LossSpec& spec,
                                 const long double* frozen_factor = nullptr);

/// Central differences of reference_token_loss at `logits` with step h. In
/// detached mode the factor is frozen at its value at `logits`.
std::vector<double> finite_difference_grad(std::span<const double> logits, std::size_t target, const LossSpec& spec,
                                           double h = 1e-5);

/// |a - b| / max(|a|, |b|, floor).
double relative_error(double a, double b, double floor = 1e-8);

struct GradCheckConfig {
  LossSpec spec;
  std::size_t n = 64;
  std::size_t trials = 100;
  double h = 1e-5;
  double logit_std = 1.0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  std::size_t trials = 0;
  std::size_t components = 0;
  double max_rel_error = 0.0;
  double mean_rel_error = 0.0;
};

/// Random N(0, logit_std) logits and uniform targets from the "gradcheck"
/// stream; compares loss_grad with finite_difference_grad per component.
GradCheckResult grad_check(const GradCheckConfig& config);

}  // namespace mile
