// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mita/grad.h"
#include "mita/ops.h"
#include "mita/reference.h"
#include "mita/rng.h"

namespace mita {
namespace {

double inner(const Mat& a, const Mat& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
  return acc;
}

TEST(FiniteDiff, LinearFunctionGivesCoefficients) {
  Rng rng(1);
  const Mat c = random_normal(3, 4, rng);
  const Mat g = finite_diff_grad([&](const Mat& x) { return inner(c, x); }, random_normal(3, 4, rng));
  EXPECT_LT(max_abs_diff(g, c), 1e-9);
}

TEST(FiniteDiff, QuadraticGivesTwiceInput) {
  Rng rng(2);
  const Mat x = random_normal(4, 5, rng);
  const Mat g = finite_diff_grad([](const Mat& y) { return inner(y, y); }, x, 1e-5);
  EXPECT_LT(max_abs_diff(g, x * 2.0), 1e-8);
}

TEST(FiniteDiff, RejectsNonPositiveStep) {
  EXPECT_THROW(finite_diff_grad([](const Mat&) { return 0.0; }, Mat(1, 1), 0.0),
               std::invalid_argument);
}

TEST(RelativeError, Definition) {
  EXPECT_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 1e-10), 1e-10 / 1e-8);
}

TEST(FullAttentionVjp, SingleKey) {
  Rng rng(3);
  const Mat up = random_normal(3, 1, rng);
  const AttentionGrads g =
      full_attention_vjp(random_normal(3, 1, rng), random_normal(3, 1, rng), random_normal(3, 1, rng), up);
  EXPECT_EQ(g.dv, up);
  EXPECT_LT(max_abs_diff(g.dq, Mat(3, 1)), 1e-15);
  EXPECT_LT(max_abs_diff(g.dk, Mat(3, 1)), 1e-15);
}

TEST(FullAttentionVjp, ZeroUpstream) {
  Rng rng(4);
  const AttentionGrads g = full_attention_vjp(random_normal(4, 6, rng), random_normal(4, 6, rng),
                                              random_normal(4, 6, rng), Mat(4, 6));
  EXPECT_EQ(g.dq, Mat(4, 6));
  EXPECT_EQ(g.dk, Mat(4, 6));
  EXPECT_EQ(g.dv, Mat(4, 6));
}

TEST(FullAttentionVjp, ShapeErrors) {
  EXPECT_THROW(full_attention_vjp(Mat(2, 3), Mat(2, 3), Mat(2, 3), Mat(2, 4)),
               std::invalid_argument);
  EXPECT_THROW(full_attention_vjp(Mat(2, 3), Mat(3, 3), Mat(3, 3), Mat(2, 3)),
               std::invalid_argument);
}

TEST(FullAttentionVjp, SumOfOutputMatchesFiniteDifferences) {
  Rng rng(5);
  const Mat q = random_normal(4, 6, rng);
  const Mat k = random_normal(4, 6, rng);
  const Mat v = random_normal(4, 6, rng);
  Mat ones(4, 6);
  for (double& x : ones.data()) x = 1.0;
  const AttentionGrads g = full_attention_vjp(q, k, v, ones);
  auto sum = [](const Mat& m) {
    double s = 0.0;
    for (double x : m.data()) s += x;
    return s;
  };
  const Mat fd = finite_diff_grad([&](const Mat& x) { return sum(full_attention(x, k, v)); }, q);
  for (std::size_t i = 0; i < fd.size(); ++i) {
    EXPECT_LT(relative_error(g.dq.data()[i], fd.data()[i]), 1e-5);
  }
}

TEST(GradCheck, FullAttentionRandomInstances) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const GradCheckReport r =
        grad_check(Mechanism::kFull, GradCheckDims{4, 16}, MitaConfig{}, seed, 1e-5);
    ASSERT_TRUE(r.pass) << "seed " << seed << " err " << r.max_rel_err;
    ASSERT_FALSE(r.tie_detected);
  }
  EXPECT_TRUE(grad_check(Mechanism::kFull, GradCheckDims{4, 6}, MitaConfig{}, 0, 1e-5).pass);
}

TEST(GradCheck, MitaRandomInstances) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const GradCheckReport r =
        grad_check(Mechanism::kMita, GradCheckDims{4, 16}, MitaConfig::full(4, 3), seed, 1e-5);
    ASSERT_FALSE(r.tie_detected) << "seed " << seed;
    ASSERT_TRUE(r.pass) << "seed " << seed << " err " << r.max_rel_err;
  }
}

// Draws whose gradients have coordinates near 1e-6, where double-precision
// differencing alone loses the relative-error budget.
TEST(GradCheck, SmallGradientCoordinatesStayWithinTolerance) {
  for (std::uint64_t seed : {7036, 7044}) {
    const GradCheckReport r =
        grad_check(Mechanism::kMita, GradCheckDims{4, 16}, MitaConfig::full(4, 3), seed, 1e-5);
    EXPECT_TRUE(r.pass) << "seed " << seed << " err " << r.max_rel_err;
  }
}

TEST(GradCheck, VariantsRandomInstances) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    for (Mechanism mech : {Mechanism::kCompressionOnly, Mechanism::kRouteOnly}) {
      const GradCheckReport r =
          grad_check(mech, GradCheckDims{4, 16}, MitaConfig::full(4, 3), seed, 1e-5);
      ASSERT_TRUE(r.pass) << mechanism_name(mech) << " seed " << seed << " err " << r.max_rel_err;
    }
  }
}

TEST(GradCheck, InfiniteToleranceAlwaysPasses) {
  const double inf = std::numeric_limits<double>::infinity();
  EXPECT_TRUE(grad_check(Mechanism::kMita, GradCheckDims{4, 16}, MitaConfig::full(4, 3), 3, inf).pass);
  EXPECT_TRUE(grad_check(Mechanism::kFull, GradCheckDims{2, 3}, MitaConfig{}, 3, inf, 10.0).pass);
}

TEST(GradCheck, ExactTopKTieIsFlagged) {
  Rng rng(6);
  const Mat q = random_normal(4, 16, rng);
  Mat k(4, 16);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 16; ++j) k(i, j) = 0.25 * static_cast<double>(i);
  const Mat v = random_normal(4, 16, rng);
  const MitaConfig cfg = MitaConfig::full(4, 3);
  EXPECT_EQ(selection_margin(q, k, cfg), 0.0);
  const GradCheckReport r = grad_check_inputs(Mechanism::kMita, q, k, v, cfg, random_normal(4, 16, rng), 1e-5);
  EXPECT_TRUE(r.tie_detected);
  EXPECT_TRUE(r.pass);
  EXPECT_THROW(mita_vjp(q, k, v, cfg, Mat(4, 16)), NondifferentiablePoint);
  EXPECT_NO_THROW(mita_vjp(q, k, v, cfg, Mat(4, 16), VjpOptions{false, 1e-9}));
}

TEST(SelectionMargin, NothingSelectedIsInfinite) {
  Rng rng(7);
  const Mat q = random_normal(3, 5, rng);
  const Mat k = random_normal(3, 5, rng);
  EXPECT_TRUE(std::isinf(selection_margin(q, k, MitaConfig::full(1, 5))));
  EXPECT_TRUE(std::isinf(selection_margin(q, k, MitaConfig::compression_only(3))));
}

TEST(MitaVjp, RouteOnlyFullWidthMatchesFullVjp) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 2 + rng.below(30);
    const std::size_t d = 1 + rng.below(6);
    const Mat q = random_normal(d, n, rng);
    const Mat k = random_normal(d, n, rng);
    const Mat v = random_normal(d, n, rng);
    const Mat up = random_normal(d, n, rng);
    const std::size_t m = 1 + rng.below(n);
    const AttentionGrads a = mita_vjp(q, k, v, MitaConfig::route_only(m, n), up, VjpOptions{false, 0.0});
    const AttentionGrads b = full_attention_vjp(q, k, v, up);
    ASSERT_LT(max_abs_diff(a.dq, b.dq), 1e-10);
    ASSERT_LT(max_abs_diff(a.dk, b.dk), 1e-10);
    ASSERT_LT(max_abs_diff(a.dv, b.dv), 1e-10);
  }
}

TEST(MitaVjp, ZeroUpstream) {
  Rng rng(9);
  const Mat q = random_normal(4, 16, rng);
  const Mat k = random_normal(4, 16, rng);
  const Mat v = random_normal(4, 16, rng);
  const AttentionGrads g = mita_vjp(q, k, v, MitaConfig::full(4, 3), Mat(4, 16));
  EXPECT_EQ(g.dq, Mat(4, 16));
  EXPECT_EQ(g.dk, Mat(4, 16));
  EXPECT_EQ(g.dv, Mat(4, 16));
}

TEST(MitaVjp, DirectionalDerivative) {
  Rng rng(10);
  const std::size_t d = 4, n = 16;
  const MitaConfig cfg = MitaConfig::full(4, 3);
  Mat q, k, v;
  do {
    q = random_normal(d, n, rng);
    k = random_normal(d, n, rng);
    v = random_normal(d, n, rng);
  } while (selection_margin(q, k, cfg) < 1e-2);
  const Mat up = random_normal(d, n, rng);
  const Mat dq = random_normal(d, n, rng);
  const Mat dk = random_normal(d, n, rng);
  const Mat dv = random_normal(d, n, rng);
  const AttentionGrads g = mita_vjp(q, k, v, cfg, up);
  const double slope = inner(g.dq, dq) + inner(g.dk, dk) + inner(g.dv, dv);
  const double h = 1e-6;
  const double f_up = inner(up, mita_attention(q + dq * h, k + dk * h, v + dv * h, cfg));
  const double f_down = inner(up, mita_attention(q - dq * h, k - dk * h, v - dv * h, cfg));
  EXPECT_LT(relative_error((f_up - f_down) / (2 * h), slope), 1e-6);
}

TEST(MitaVjp, PoolingPathIsAdjoint) {
  // <pool(Q), G> == <Q, pool_adjoint(G)>
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(30);
    const std::size_t m = 1 + rng.below(n);
    const Mat q = random_normal(3, n, rng);
    const Mat g = random_normal(3, m, rng);
    ASSERT_NEAR(inner(adaptive_avg_pool(q, m), g), inner(q, adaptive_avg_pool_adjoint(g, n)), 1e-12);
  }
  // Each pooled cotangent spreads uniformly over its window; windows {0,1,2}
  // and {2,3,4} overlap at position 2.
  const Mat spread = adaptive_avg_pool_adjoint(Mat::from_rows({{4.0, 9.0}}), 5);
  EXPECT_LT(max_abs_diff(spread, Mat::from_rows({{4.0 / 3, 4.0 / 3, 13.0 / 3, 3.0, 3.0}})), 1e-15);
}

TEST(MitaVjp, DispatchMatchesDirectCall) {
  Rng rng(12);
  const Mat q = random_normal(4, 12, rng);
  const Mat k = random_normal(4, 12, rng);
  const Mat v = random_normal(4, 12, rng);
  const Mat up = random_normal(4, 12, rng);
  const MitaConfig cfg = MitaConfig::full(3, 4);
  const VjpOptions loose{false, 0.0};
  EXPECT_EQ(attention_vjp(Mechanism::kMita, q, k, v, cfg, up, loose).dk,
            mita_vjp(q, k, v, cfg, up, loose).dk);
  EXPECT_EQ(attention_vjp(Mechanism::kFull, q, k, v, cfg, up).dq, full_attention_vjp(q, k, v, up).dq);
  EXPECT_EQ(attention_vjp(Mechanism::kCompressionOnly, q, k, v, cfg, up).dv,
            mita_vjp(q, k, v, MitaConfig::compression_only(3), up).dv);
}

}  // namespace
}  // namespace mita
