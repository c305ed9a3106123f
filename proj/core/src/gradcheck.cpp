#include "mile/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mile/error.hpp"
#include "mile/rng.hpp"

namespace mile {

long double reference_token_loss(std::span<const long double> z, std::size_t target, const LossSpec& spec,
                                 const long double* frozen_factor) {
  if (target >= z.size()) throw IndexError("reference loss: target out of range");
  const long double m = *std::max_element(z.begin(), z.end());
  long double s = 0.0L;
  for (long double v : z) s += std::exp(v - m);
  const long double lse = m + std::log(s);
  const long double ce = lse - z[target];
  const double gamma = spec.effective_gamma();
  if (gamma == 0.0) return ce;
  long double factor;
  if (frozen_factor) {
    factor = *frozen_factor;
  } else if (spec.kind == LossKind::kFocal) {
    factor = std::pow(1.0L - std::exp(-ce), static_cast<long double>(gamma));
  } else {
    long double h = 0.0L;
    for (long double v : z) {
      const long double lp = v - lse;
      h -= std::exp(lp) * lp;
    }
    factor = std::pow(1.0L + h, static_cast<long double>(gamma));
  }
  return factor * ce;
}

std::vector<double> finite_difference_grad(std::span<const double> logits, std::size_t target, const LossSpec& spec,
                                           double h) {
  std::vector<long double> z(logits.begin(), logits.end());
  long double frozen = 0.0L;
  const long double* fp = nullptr;
  if (spec.factor_grad == FactorGrad::kDetached && spec.effective_gamma() != 0.0) {
    const long double ce = reference_token_loss(z, target, LossSpec{});
    frozen = reference_token_loss(z, target, spec) / ce;
    fp = &frozen;
  }
  std::vector<double> g(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const long double x = z[i];
    z[i] = x + h;
    const long double up = reference_token_loss(z, target, spec, fp);
    z[i] = x - h;
    const long double down = reference_token_loss(z, target, spec, fp);
    z[i] = x;
    g[i] = static_cast<double>((up - down) / (2.0L * h));
  }
  return g;
}

double relative_error(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

GradCheckResult grad_check(const GradCheckConfig& c) {
  c.spec.validate();
  if (c.n < 2) throw InputError("grad-check needs n >= 2");
  if (c.trials == 0) throw InputError("grad-check needs at least one trial");
  if (!(c.h > 0.0)) throw InputError("grad-check step must be positive");
  Rng rng = Rng::stream(c.seed, "gradcheck");
  GradCheckResult r;
  double sum = 0.0;
  std::vector<double> z(c.n);
  for (std::size_t t = 0; t < c.trials; ++t) {
    for (double& v : z) v = rng.normal(0.0, c.logit_std);
    const std::size_t target = rng.below(c.n);
    const std::vector<double> analytic = loss_grad(z, target, c.spec);
    const std::vector<double> numeric = finite_difference_grad(z, target, c.spec, c.h);
    for (std::size_t i = 0; i < c.n; ++i) {
      const double e = relative_error(analytic[i], numeric[i]);
      r.max_rel_error = std::max(r.max_rel_error, e);
      sum += e;
      ++r.components;
    }
    ++r.trials;
  }
  r.mean_rel_error = sum / static_cast<double>(r.components);
  return r;
}

}  // namespace mile
