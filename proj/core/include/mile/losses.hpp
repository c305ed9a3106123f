#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mile/tensor.hpp"

namespace mile {

enum class LossKind { kCrossEntropy, kFocal, kMiLe };

/// Whether the scaling factor takes part in differentiation.
enum class FactorGrad { kDetached, kDifferentiable };

/// Largest focusing exponent accepted by LossSpec::validate().
inline constexpr double kMaxGamma = 10.0;

struct LossSpec {
  LossKind kind = LossKind::kCrossEntropy;
  double gamma = 0.0;
  FactorGrad factor_grad = FactorGrad::kDifferentiable;

  /// Throws ConfigError unless 0 <= gamma <= kMaxGamma.
  void validate() const;
  /// gamma, or 0 for cross-entropy.
  double effective_gamma() const noexcept {
    return kind == LossKind::kCrossEntropy ? 0.0 : gamma;
  }
};

std::string_view to_string(LossKind kind) noexcept;
std::string_view to_string(FactorGrad mode) noexcept;
LossKind parse_loss_kind(std::string_view name);
FactorGrad parse_factor_grad(std::string_view name);

/// A normalized distribution together with its logarithms.
struct ProbDist {
  std::vector<double> probs;
  std::vector<double> log_probs;

  /// Stable softmax / log-softmax of raw scores.
  static ProbDist from_logits(std::span<const double> logits);
  /// Wraps explicit probabilities; zero entries get log_prob = -inf.
  static ProbDist from_probs(std::span<const double> probs);

  std::size_t size() const noexcept { return probs.size(); }
};

/// Shannon entropy in nats, with 0 log 0 = 0. Clamped to [0, ln N].
double entropy(const ProbDist& dist);

struct PerTokenLoss {
  double value = 0.0;
  /// (1+H)^gamma for MiLe, (1-p_t)^gamma for focal, 1 for cross-entropy.
  double factor = 1.0;
  /// Unscaled cross-entropy -log p_t.
  double ce_value = 0.0;
};

PerTokenLoss ce_loss(std::span<const double> logits, std::size_t target);
PerTokenLoss focal_loss(std::span<const double> logits, std::size_t target, double gamma);
PerTokenLoss mile_loss(std::span<const double> logits, std::size_t target, double gamma);
PerTokenLoss token_loss(std::span<const double> logits, std::size_t target, const LossSpec& spec);

/// d(loss)/d(logits) in closed form for the given spec.
std::vector<double> loss_grad(std::span<const double> logits, std::size_t target,
                              const LossSpec& spec);

struct BatchLossStats {
  std::size_t tokens = 0;
  double mean_loss = 0.0;
  double mean_ce = 0.0;
  double mean_factor = 0.0;
};

/// Mean per-token loss over positions with mask = 1.
///
/// `logits` is [rows x N] or [batch x seq x N]; `targets` and `mask` hold one
/// entry per row. An all-zero mask is an InputError.
Tensor batch_loss(const Tensor& logits, std::span<const std::int32_t> targets,
                  std::span<const std::uint8_t> mask, const LossSpec& spec,
                  BatchLossStats* stats = nullptr);

}  // namespace mile
