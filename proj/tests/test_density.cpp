#include "topofit/density.hpp"

#include <gtest/gtest.h>

#include "topofit/core.hpp"

using namespace topofit;

TEST(LogisticCdf, ValuesAndSymmetry) {
  EXPECT_DOUBLE_EQ(logistic_cdf(0.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(logistic_cdf(0.0, 250.0), 0.5);
  EXPECT_NEAR(logistic_cdf(1.0, 1.0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(logistic_cdf(0.01, 100.0), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  for (double x : {0.1, 0.7, 3.0, 17.0, 80.0}) {
    EXPECT_NEAR(logistic_cdf(x, 1.0) + logistic_cdf(-x, 1.0), 1.0, 1e-15) << x;
    EXPECT_NEAR(log_logistic_cdf(x, 1.0), std::log(logistic_cdf(x, 1.0)), 1e-12) << x;
    EXPECT_NEAR(log_logistic_cdf(-x, 2.0), std::log(logistic_cdf(-x, 2.0)), 1e-12) << x;
  }
  // extreme negative arguments stay finite in log space
  EXPECT_NEAR(log_logistic_cdf(-2000.0, 1.0), -2000.0, 1e-9);
  EXPECT_DOUBLE_EQ(log_logistic_cdf(2000.0, 1.0), 0.0);
  // -700 is still representable in linear space; -800 underflows to exactly 0
  EXPECT_GT(logistic_cdf(-700.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(logistic_cdf(-800.0, 1.0), 0.0);
}

TEST(Alpha, KnownCrossingValue) {
  // s = 100 with distances +0.01 -> -0.01 gives a ratio of exactly exp(-1)
  const DensityMapping mapping{100.0};
  const double a = alpha_from_distances(0.01, -0.01, mapping);
  EXPECT_NEAR(a, 1.0 - std::exp(-1.0), 1e-12);
}

TEST(Alpha, ClampsWhenDistanceGrows) {
  const DensityMapping mapping{50.0};
  EXPECT_DOUBLE_EQ(alpha_from_distances(0.01, 0.02, mapping), 0.0);
  EXPECT_DOUBLE_EQ(alpha_from_distances(-0.03, -0.01, mapping), 0.0);
  EXPECT_DOUBLE_EQ(alpha_from_distances(0.05, 0.05, mapping), 0.0);
  // decreasing distance accumulates opacity
  EXPECT_GT(alpha_from_distances(0.02, 0.01, mapping), 0.0);
  EXPECT_LT(alpha_from_distances(0.02, 0.01, mapping), 1.0);
}

TEST(Alpha, RangeAndSaturation) {
  const DensityMapping mapping{500.0};
  // a deep crossing saturates toward full opacity but never exceeds one
  const double a = alpha_from_distances(0.5, -0.5, mapping);
  EXPECT_LE(a, 1.0);
  EXPECT_GT(a, 1.0 - 1e-12);
  // tiny scale keeps alpha small
  const DensityMapping soft{0.01};
  EXPECT_LT(alpha_from_distances(0.5, -0.5, soft), 0.01);
}

TEST(AlphaGradients, MatchFiniteDifferences) {
  Rng rng(77);
  const double eps = 1e-7;
  int active = 0;
  for (int i = 0; i < 200; ++i) {
    const double scale = rng.uniform(5.0, 300.0);
    double sk = rng.uniform(-0.05, 0.05);
    double sn = rng.uniform(-0.05, 0.05);
    const DensityMapping m{scale};
    const double a = alpha_from_distances(sk, sn, m);
    const AlphaGrad g = alpha_gradients(sk, sn, m);
    if (a == 0.0) {
      // check the clamp only strictly inside the clamped region
      if (alpha_from_distances(sk + 10 * eps, sn - 10 * eps, m) == 0.0) {
        EXPECT_EQ(g.d_sk, 0.0);
        EXPECT_EQ(g.d_snext, 0.0);
        EXPECT_EQ(g.d_scale, 0.0);
      }
      continue;
    }
    ++active;
    const double fd_sk = (alpha_from_distances(sk + eps, sn, m) -
                          alpha_from_distances(sk - eps, sn, m)) /
                         (2 * eps);
    const double fd_sn = (alpha_from_distances(sk, sn + eps, m) -
                          alpha_from_distances(sk, sn - eps, m)) /
                         (2 * eps);
    const double seps = 1e-5;
    const double fd_scale = (alpha_from_distances(sk, sn, DensityMapping{scale + seps}) -
                             alpha_from_distances(sk, sn, DensityMapping{scale - seps})) /
                            (2 * seps);
    const double tol = 1e-5 * std::max(1.0, scale);
    EXPECT_NEAR(g.d_sk, fd_sk, tol) << "case " << i;
    EXPECT_NEAR(g.d_snext, fd_sn, tol) << "case " << i;
    EXPECT_NEAR(g.d_scale, fd_scale, 1e-6) << "case " << i;
  }
  EXPECT_GT(active, 40);
}

TEST(AlphaGradients, SignsAtCrossing) {
  // at a front crossing, raising the next distance lowers alpha and
  // sharpening raises it
  const DensityMapping m{100.0};
  const AlphaGrad g = alpha_gradients(0.01, -0.01, m);
  EXPECT_LT(g.d_snext, 0.0);
  EXPECT_GT(g.d_sk, 0.0);
  EXPECT_GT(g.d_scale, 0.0);
}
