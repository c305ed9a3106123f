#include "mile/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mile/error.hpp"

namespace mile {

void LossSpec::validate() const {
  if (!(gamma >= 0.0) || gamma > kMaxGamma) {
    throw ConfigError("loss.gamma must lie in [0, " + std::to_string(kMaxGamma) + "], got " +
                      std::to_string(gamma));
  }
}

std::string_view to_string(LossKind kind) noexcept {
  switch (kind) {
    case LossKind::kCrossEntropy: return "ce";
    case LossKind::kFocal: return "focal";
    case LossKind::kMiLe: return "mile";
  }
  return "?";
}

std::string_view to_string(FactorGrad mode) noexcept {
  return mode == FactorGrad::kDetached ? "detached" : "differentiable";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "ce" || name == "cross_entropy" || name == "CrossEntropy") return LossKind::kCrossEntropy;
  if (name == "focal" || name == "Focal") return LossKind::kFocal;
  if (name == "mile" || name == "MiLe") return LossKind::kMiLe;
  throw ConfigError("unknown loss kind '" + std::string(name) + "' (expected ce, focal or mile)");
}

FactorGrad parse_factor_grad(std::string_view name) {
  if (name == "detached" || name == "Detached") return FactorGrad::kDetached;
  if (name == "differentiable" || name == "Differentiable") return FactorGrad::kDifferentiable;
  throw ConfigError("unknown factor_grad '" + std::string(name) +
                    "' (expected detached or differentiable)");
}

namespace {

void log_softmax_row(std::span<const double> z, std::span<double> logp) {
  if (z.empty()) throw DimensionError("loss: empty logit vector");
  double mx = z[0];
  for (double v : z) {
    if (!std::isfinite(v)) throw NumericError("loss: non-finite logit");
    mx = std::max(mx, v);
  }
  double acc = 0.0;
  for (double v : z) acc += std::exp(v - mx);
  const double lse = std::log(acc);
  for (std::size_t j = 0; j < z.size(); ++j) logp[j] = z[j] - mx - lse;
}

// Every log-prob from log_softmax_row is <= 0, so each term is >= 0.
double entropy_of_logp(std::span<const double> logp) {
  double h = 0.0;
  for (double l : logp) h -= std::exp(l) * l;
  return std::clamp(h, 0.0, std::log(static_cast<double>(logp.size())));
}

void check_target(std::size_t target, std::size_t n) {
  if (n == 0) throw DimensionError("loss: empty logit vector");
  if (target >= n) {
    throw IndexError("target " + std::to_string(target) + " outside vocabulary of " + std::to_string(n));
  }
}

void check_gamma(double gamma) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be a finite value >= 0");
}

// 1 - p_t computed from log p_t without cancellation.
double one_minus_p(double log_pt) { return -std::expm1(log_pt); }

double focal_factor(double log_pt, double gamma) {
  if (gamma == 0.0) return 1.0;
  const double q = one_minus_p(log_pt);
  return q > 0.0 ? std::exp(gamma * std::log(q)) : 0.0;
}

double mile_factor(double h, double gamma) { return std::pow(1.0 + h, gamma); }

// Loss and (optionally) gradient for one row, sharing one log-softmax pass.
// `logp` is scratch of length N; `grad` is empty or length N.
PerTokenLoss evaluate_row(std::span<const double> z, std::size_t target, const LossSpec& spec,
                          std::span<double> logp, std::span<double> grad) {
  const std::size_t n = z.size();
  check_target(target, n);
  log_softmax_row(z, logp);
  const double ce = -logp[target];
  const double gamma = spec.effective_gamma();

  PerTokenLoss out;
  out.ce_value = ce;
  double h = 0.0;
  switch (spec.kind) {
    case LossKind::kCrossEntropy:
      out.factor = 1.0;
      break;
    case LossKind::kFocal:
      out.factor = focal_factor(logp[target], gamma);
      break;
    case LossKind::kMiLe:
      h = entropy_of_logp(logp);
      out.factor = mile_factor(h, gamma);
      break;
  }
  out.value = out.factor * ce;
  if (grad.empty()) return out;

  for (std::size_t j = 0; j < n; ++j) {
    grad[j] = out.factor * (std::exp(logp[j]) - (j == target ? 1.0 : 0.0));
  }
  if (spec.factor_grad == FactorGrad::kDetached || gamma == 0.0) return out;

  if (spec.kind == LossKind::kMiLe) {
    // d(1+H)^g/dz_j = g (1+H)^(g-1) dH/dz_j with dH/dz_j = -p_j (log p_j + H).
    const double coeff = gamma * std::pow(1.0 + h, gamma - 1.0) * ce;
    for (std::size_t j = 0; j < n; ++j) {
      grad[j] += coeff * (-std::exp(logp[j]) * (logp[j] + h));
    }
  } else if (spec.kind == LossKind::kFocal) {
    const double q = one_minus_p(logp[target]);
    if (q > 0.0) {
      // d(1-p_t)^g/dz_j = -g (1-p_t)^(g-1) p_t (delta_jt - p_j).
      const double pt = std::exp(logp[target]);
      const double coeff = gamma * std::exp((gamma - 1.0) * std::log(q)) * pt * ce;
      for (std::size_t j = 0; j < n; ++j) {
        grad[j] -= coeff * ((j == target ? 1.0 : 0.0) - std::exp(logp[j]));
      }
    }
  }
  return out;
}

}  // namespace

ProbDist ProbDist::from_logits(std::span<const double> logits) {
  ProbDist d;
  d.log_probs.resize(logits.size());
  log_softmax_row(logits, d.log_probs);
  d.probs.resize(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) d.probs[j] = std::exp(d.log_probs[j]);
  return d;
}

ProbDist ProbDist::from_probs(std::span<const double> probs) {
  if (probs.empty()) throw DimensionError("ProbDist: empty distribution");
  ProbDist d;
  d.probs.assign(probs.begin(), probs.end());
  d.log_probs.resize(probs.size());
  double total = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) {
    if (!(probs[j] >= 0.0 && probs[j] <= 1.0)) throw InputError("ProbDist: probability outside [0, 1]");
    total += probs[j];
    d.log_probs[j] = probs[j] > 0.0 ? std::log(probs[j]) : -std::numeric_limits<double>::infinity();
  }
  if (std::abs(total - 1.0) > 1e-12) throw InputError("ProbDist: probabilities do not sum to 1");
  return d;
}

double entropy(const ProbDist& dist) {
  if (dist.size() == 0) throw DimensionError("entropy: empty distribution");
  double h = 0.0;
  for (std::size_t j = 0; j < dist.size(); ++j) {
    if (dist.probs[j] > 0.0) h -= dist.probs[j] * dist.log_probs[j];
  }
  return std::clamp(h, 0.0, std::log(static_cast<double>(dist.size())));
}

PerTokenLoss ce_loss(std::span<const double> logits, std::size_t target) {
  return token_loss(logits, target, LossSpec{LossKind::kCrossEntropy, 0.0});
}

PerTokenLoss focal_loss(std::span<const double> logits, std::size_t target, double gamma) {
  check_gamma(gamma);
  return token_loss(logits, target, LossSpec{LossKind::kFocal, gamma});
}

PerTokenLoss mile_loss(std::span<const double> logits, std::size_t target, double gamma) {
  check_gamma(gamma);
  return token_loss(logits, target, LossSpec{LossKind::kMiLe, gamma});
}

PerTokenLoss token_loss(std::span<const double> logits, std::size_t target, const LossSpec& spec) {
  std::vector<double> logp(logits.size());
  return evaluate_row(logits, target, spec, logp, {});
}

std::vector<double> loss_grad(std::span<const double> logits, std::size_t target,
                              const LossSpec& spec) {
  check_gamma(spec.gamma);
  std::vector<double> logp(logits.size()), grad(logits.size());
  evaluate_row(logits, target, spec, logp, grad);
  return grad;
}

Tensor batch_loss(const Tensor& logits, std::span<const std::int32_t> targets,
                  std::span<const std::uint8_t> mask, const LossSpec& spec, BatchLossStats* stats) {
  check_gamma(spec.gamma);
  if (logits.rank() < 2) throw DimensionError("batch_loss: logits need a vocabulary axis");
  const std::size_t n = logits.shape().back();
  const std::size_t rows = logits.numel() / n;
  if (targets.size() != rows || mask.size() != rows) {
    throw DimensionError("batch_loss: " + std::to_string(rows) + " logit rows but " +
                         std::to_string(targets.size()) + " targets and " +
                         std::to_string(mask.size()) + " mask entries");
  }
  std::size_t count = 0;
  for (std::uint8_t m : mask) {
    if (m > 1) throw InputError("batch_loss: mask entries must be 0 or 1");
    count += m;
  }
  if (count == 0) throw InputError("batch_loss: degenerate batch, every position is masked");

  const bool grad = logits.requires_grad() && Graph::active() != nullptr;
  std::vector<double> logp(n);
  std::vector<double> dlogits(grad ? logits.numel() : 0, 0.0);
  double total = 0.0, total_ce = 0.0, total_factor = 0.0;
  auto z = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (mask[r] == 0) continue;
    if (targets[r] < 0) throw IndexError("batch_loss: negative target");
    std::span<double> g = grad ? std::span<double>(dlogits).subspan(r * n, n) : std::span<double>{};
    const PerTokenLoss l = evaluate_row(z.subspan(r * n, n), static_cast<std::size_t>(targets[r]), spec, logp, g);
    total += l.value;
    total_ce += l.ce_value;
    total_factor += l.factor;
  }
  const double inv = 1.0 / static_cast<double>(count);
  if (stats != nullptr) {
    stats->tokens = count;
    stats->mean_loss = total * inv;
    stats->mean_ce = total_ce * inv;
    stats->mean_factor = total_factor * inv;
  }
  if (!std::isfinite(total)) throw NumericError("batch_loss: non-finite loss");
  Tensor result = Tensor::scalar(total * inv, grad);
  if (grad) {
    Graph::active()->record(result, [logits, dlogits = std::move(dlogits), inv](std::span<const double> g) mutable {
      auto gl = logits.grad_mut();
      const double s = g[0] * inv;
      for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += dlogits[i] * s;
    });
  }
  return result;
}

}  // namespace mile
