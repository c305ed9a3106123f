#include <gtest/gtest.h>

#include <cmath>

#include "mile/error.hpp"
#include "mile/losses.hpp"
#include "mile/ops.hpp"
#include "oracles.hpp"

using namespace mile;

namespace {

const LossSpec kCE{};
LossSpec focal(double g, FactorGrad m = FactorGrad::kDifferentiable) { return {LossKind::kFocal, g, m}; }
LossSpec mile_spec(double g, FactorGrad m = FactorGrad::kDifferentiable) { return {LossKind::kMiLe, g, m}; }

}  // namespace

TEST(LossSpec, ValidatesGamma) {
  EXPECT_NO_THROW(mile_spec(0.0).validate());
  EXPECT_NO_THROW(mile_spec(kMaxGamma).validate());
  EXPECT_THROW(mile_spec(-0.1).validate(), ConfigError);
  EXPECT_THROW(mile_spec(kMaxGamma + 1).validate(), ConfigError);
  EXPECT_THROW(mile_spec(NAN).validate(), ConfigError);
}

TEST(LossSpec, NamesRoundTrip) {
  for (LossKind k : {LossKind::kCrossEntropy, LossKind::kFocal, LossKind::kMiLe}) {
    EXPECT_EQ(parse_loss_kind(to_string(k)), k);
  }
  for (FactorGrad m : {FactorGrad::kDetached, FactorGrad::kDifferentiable}) {
    EXPECT_EQ(parse_factor_grad(to_string(m)), m);
  }
  EXPECT_THROW(parse_loss_kind("hinge"), ConfigError);
}

TEST(CrossEntropy, UniformLogitsGiveLogN) {
  for (std::size_t n : {2u, 5u, 512u}) {
    std::vector<double> z(n, 0.3);
    EXPECT_NEAR(ce_loss(z, 1).value, std::log(static_cast<double>(n)), 1e-13);
  }
}

TEST(CrossEntropy, MatchesExtendedPrecision) {
  oracle::Gen g(1);
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = 2 + g.below(200);
    const auto z = g.normals(n, g.uniform(0.1, 20.0));
    const std::size_t t = g.below(n);
    const double ref = static_cast<double>(oracle::cross_entropy(z, t));
    EXPECT_NEAR(ce_loss(z, t).value, ref, 1e-12 * std::max(1.0, ref));
  }
}

TEST(CrossEntropy, HandComputedTwoClassValue) {
  // softmax([0, ln 3]) = [1/4, 3/4]
  const std::vector<double> z{0.0, std::log(3.0)};
  EXPECT_NEAR(ce_loss(z, 0).value, std::log(4.0), 1e-15);
  EXPECT_NEAR(ce_loss(z, 1).value, std::log(4.0 / 3.0), 1e-15);
}

TEST(Focal, HandComputedValue) {
  // p_t = 3/4, gamma 2: (1/4)^2 * ln(4/3)
  const std::vector<double> z{0.0, std::log(3.0)};
  const PerTokenLoss l = focal_loss(z, 1, 2.0);
  EXPECT_NEAR(l.factor, 1.0 / 16.0, 1e-15);
  EXPECT_NEAR(l.value, std::log(4.0 / 3.0) / 16.0, 1e-15);
}

TEST(Focal, MatchesExtendedPrecision) {
  oracle::Gen g(2);
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = 2 + g.below(100);
    const auto z = g.normals(n, 3.0);
    const std::size_t t = g.below(n);
    const double gamma = g.uniform(0.0, 5.0);
    const double ref = static_cast<double>(oracle::focal(z, t, gamma));
    EXPECT_NEAR(focal_loss(z, t, gamma).value, ref, 1e-12 * std::max(1.0, ref));
  }
}

TEST(Focal, CertainPredictionHasZeroLoss) {
  const std::vector<double> z{800.0, 0.0, 0.0};
  const PerTokenLoss l = focal_loss(z, 0, 2.0);
  EXPECT_EQ(l.value, 0.0);
  for (double v : loss_grad(z, 0, focal(2.0))) EXPECT_TRUE(std::isfinite(v));
}

TEST(MiLe, HandComputedValue) {
  // Uniform over 4: H = ln 4, CE = ln 4.
  const std::vector<double> z(4, 0.0);
  const PerTokenLoss l = mile_loss(z, 2, 1.0);
  EXPECT_NEAR(l.factor, 1.0 + std::log(4.0), 1e-15);
  EXPECT_NEAR(l.value, (1.0 + std::log(4.0)) * std::log(4.0), 1e-14);
}

TEST(MiLe, MatchesExtendedPrecision) {
  oracle::Gen g(3);
  for (int i = 0; i < 300; ++i) {
    const std::size_t n = 2 + g.below(300);
    const auto z = g.normals(n, g.uniform(0.1, 8.0));
    const std::size_t t = g.below(n);
    const double gamma = g.uniform(0.0, 5.0);
    const double ref = static_cast<double>(oracle::mile(z, t, gamma));
    EXPECT_NEAR(mile_loss(z, t, gamma).value, ref, 1e-11 * std::max(1.0, ref));
  }
}

TEST(Degeneracy, GammaZeroIsCrossEntropyBitForBit) {
  oracle::Gen g(4);
  for (std::size_t n : {5u, 64u, 1000u}) {
    for (int i = 0; i < 100; ++i) {
      const auto z = g.normals(n, g.uniform(0.1, 10.0));
      const std::size_t t = g.below(n);
      const double ce = ce_loss(z, t).value;
      EXPECT_EQ(mile_loss(z, t, 0.0).value, ce);
      EXPECT_EQ(focal_loss(z, t, 0.0).value, ce);
      const auto gce = loss_grad(z, t, kCE);
      EXPECT_EQ(loss_grad(z, t, mile_spec(0.0)), gce);
      EXPECT_EQ(loss_grad(z, t, focal(0.0)), gce);
    }
  }
}

TEST(Entropy, BoundsHoldOnRandomLogits) {
  oracle::Gen g(5);
  for (int i = 0; i < 2000; ++i) {
    const std::size_t n = 2 + g.below(600);
    const auto z = g.normals(n, g.uniform(0.0, 50.0));
    const double h = entropy(ProbDist::from_logits(z));
    EXPECT_GE(h, 0.0);
    EXPECT_LE(h, std::log(static_cast<double>(n)));
    EXPECT_NEAR(h, static_cast<double>(oracle::entropy(z)), 1e-11);
  }
}

TEST(Entropy, UniformAttainsLogN) {
  for (std::size_t n : {2u, 7u, 512u, 50000u}) {
    const double h = entropy(ProbDist::from_logits(std::vector<double>(n, -1.25)));
    EXPECT_NEAR(h, std::log(static_cast<double>(n)), 1e-9);
  }
}

TEST(Entropy, OneHotIsZero) {
  const std::vector<double> p{0.0, 1.0, 0.0};
  EXPECT_EQ(entropy(ProbDist::from_probs(p)), 0.0);
}

TEST(ProbDist, RejectsUnnormalizedInput) {
  const std::vector<double> p{0.5, 0.4};
  EXPECT_THROW(ProbDist::from_probs(p), InputError);
  const std::vector<double> q{1.5, -0.5};
  EXPECT_THROW(ProbDist::from_probs(q), InputError);
}

TEST(Losses, InputErrors) {
  const std::vector<double> z{1.0, 2.0};
  EXPECT_THROW(ce_loss(z, 2), IndexError);
  EXPECT_THROW(ce_loss(std::vector<double>{}, 0), DimensionError);
  EXPECT_THROW(ce_loss(std::vector<double>{1.0, NAN}, 0), NumericError);
  EXPECT_THROW(mile_loss(z, 0, -1.0), ConfigError);
}

TEST(LossGrad, CrossEntropyIsSoftmaxMinusOneHot) {
  const std::vector<double> z{0.0, std::log(3.0)};
  const auto gr = loss_grad(z, 0, kCE);
  EXPECT_NEAR(gr[0], 0.25 - 1.0, 1e-15);
  EXPECT_NEAR(gr[1], 0.75, 1e-15);
}

TEST(LossGrad, MatchesFiniteDifferencesAllModes) {
  oracle::Gen g(6);
  const std::vector<LossSpec> specs{kCE,
                                    focal(2.0),
                                    focal(0.5, FactorGrad::kDetached),
                                    mile_spec(1.0),
                                    mile_spec(3.0),
                                    mile_spec(1.0, FactorGrad::kDetached)};
  for (const LossSpec& s : specs) {
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t n = 2 + g.below(40);
      const auto z = g.normals(n);
      const std::size_t t = g.below(n);
      const auto a = loss_grad(z, t, s);
      std::function<double(std::span<const double>)> f;
      if (s.factor_grad == FactorGrad::kDetached) {
        const double frozen = token_loss(z, t, s).factor;
        f = [=](std::span<const double> x) { return frozen * static_cast<double>(oracle::cross_entropy(x, t)); };
      } else if (s.kind == LossKind::kFocal) {
        f = [=](std::span<const double> x) { return static_cast<double>(oracle::focal(x, t, s.gamma)); };
      } else if (s.kind == LossKind::kMiLe) {
        f = [=](std::span<const double> x) { return static_cast<double>(oracle::mile(x, t, s.gamma)); };
      } else {
        f = [=](std::span<const double> x) { return static_cast<double>(oracle::cross_entropy(x, t)); };
      }
      const auto fd = oracle::central_diff(f, z, 1e-5);
      for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(a[i], fd[i], 1e-7) << to_string(s.kind) << " i=" << i;
    }
  }
}

TEST(LossGrad, CrossEntropyGradientSumsToZero) {
  oracle::Gen g(7);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 2 + g.below(100);
    const auto z = g.normals(n, 4.0);
    for (const LossSpec& s : {kCE, mile_spec(2.0), focal(2.0), mile_spec(1.0, FactorGrad::kDetached)}) {
      double sum = 0.0;
      for (double v : loss_grad(z, g.below(n), s)) sum += v;
      EXPECT_NEAR(sum, 0.0, 1e-12);  // softmax is shift invariant
    }
  }
}

TEST(BatchLoss, MeanOverUnmaskedRows) {
  oracle::Gen g(8);
  const std::size_t rows = 6, n = 7;
  const auto z = g.normals(rows * n);
  const std::vector<std::int32_t> targets{0, 1, 2, 3, 4, 5};
  const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1};
  const LossSpec s = mile_spec(1.0);
  BatchLossStats st;
  Tensor loss = batch_loss(Tensor({rows, n}, z), targets, mask, s, &st);
  double expect = 0.0, ce = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    std::span<const double> row(z.data() + r * n, n);
    expect += static_cast<double>(oracle::mile(row, targets[r], 1.0));
    ce += static_cast<double>(oracle::cross_entropy(row, targets[r]));
  }
  EXPECT_EQ(st.tokens, 4u);
  EXPECT_NEAR(loss.item(), expect / 4, 1e-12);
  EXPECT_NEAR(st.mean_ce, ce / 4, 1e-12);
}

TEST(BatchLoss, GradientFlowsThroughTape) {
  oracle::Gen g(9);
  const std::size_t B = 2, T = 3, n = 5;
  const auto z = g.normals(B * T * n);
  const std::vector<std::int32_t> targets{0, 1, 2, 3, 4, 0};
  const std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1};
  const LossSpec s = focal(1.5);
  Tensor logits({B, T, n}, z, true);
  {
    Graph gr;
    Graph::Scope scope(gr);
    gr.backward(batch_loss(logits, targets, mask, s));
  }
  for (std::size_t r = 0; r < B * T; ++r) {
    std::span<const double> row(z.data() + r * n, n);
    const auto expect = loss_grad(row, targets[r], s);
    for (std::size_t i = 0; i < n; ++i) {
      const double e = mask[r] ? expect[i] / 5.0 : 0.0;
      EXPECT_NEAR(logits.grad()[r * n + i], e, 1e-15);
    }
  }
}

TEST(BatchLoss, DegenerateMaskIsInputError) {
  const std::vector<std::int32_t> targets{0, 1};
  const std::vector<std::uint8_t> mask{0, 0};
  EXPECT_THROW(batch_loss(Tensor::zeros({2, 3}), targets, mask, kCE), InputError);
  const std::vector<std::uint8_t> short_mask{1};
  EXPECT_THROW(batch_loss(Tensor::zeros({2, 3}), targets, short_mask, kCE), DimensionError);
}
