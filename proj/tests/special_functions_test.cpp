#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include <cvlm/rng.hpp>
#include <cvlm/special_functions.hpp>

namespace cvlm {
namespace {

TEST(StdNormalPdf, KnownValues) {
  EXPECT_NEAR(std_normal_pdf(0.0), 0.3989423, 1e-7);
  EXPECT_NEAR(std_normal_pdf(1.0), 0.2419707, 1e-7);
  EXPECT_DOUBLE_EQ(std_normal_pdf(1.7), std_normal_pdf(-1.7));
}

TEST(StdNormalPdf, RejectsNonFinite) {
  EXPECT_THROW(std_normal_pdf(std::numeric_limits<double>::quiet_NaN()), DomainError);
  EXPECT_THROW(std_normal_pdf(std::numeric_limits<double>::infinity()), DomainError);
}

TEST(StdNormalCdf, KnownValues) {
  EXPECT_DOUBLE_EQ(std_normal_cdf(0.0).value(), 0.5);
  EXPECT_NEAR(std_normal_cdf(1.0).value(), 0.8413447, 1e-7);
  EXPECT_NEAR(std_normal_cdf(-1.0).value(), 1.0 - 0.8413447, 1e-7);
}

TEST(StdNormalCdf, LowerTailStaysPositive) {
  for (double x = -10.0; x >= -38.0; x -= 1.0) EXPECT_GT(std_normal_cdf(x).value(), 0.0) << x;
}

TEST(StdNormalCdf, RejectsNonFinite) {
  EXPECT_THROW(std_normal_cdf(std::numeric_limits<double>::quiet_NaN()), DomainError);
}

// Near x = 8 neighbouring values of Phi round to the same double, so strict
// growth on the upper half is checked through the tail 1 - Phi(x) = Phi(-x).
TEST(StdNormalCdf, IncreasingOnGrid) {
  double prev = std_normal_cdf(-8.0).value();
  for (int k = 1; k <= 16000; ++k) {
    const double x = -8.0 + 1e-3 * k;
    const double cur = std_normal_cdf(x).value();
    if (x <= 0.0) {
      ASSERT_LT(prev, cur) << x;
    } else {
      ASSERT_LE(prev, cur) << x;
      ASSERT_GT(std_normal_cdf(-(x - 1e-3)).value(), std_normal_cdf(-x).value()) << x;
    }
    prev = cur;
  }
}

TEST(StdNormalCdf, DerivativeIsPdf) {
  const double h = 1e-5;
  for (double x = -6.0; x <= 6.0; x += 0.25) {
    const double fd = (std_normal_cdf(x + h).value() - std_normal_cdf(x - h).value()) / (2 * h);
    EXPECT_NEAR(fd, std_normal_pdf(x), 1e-6) << x;
  }
}

TEST(StdNormalQuantile, KnownValues) {
  EXPECT_EQ(std_normal_quantile(0.5), 0.0);
  EXPECT_NEAR(std_normal_quantile(0.975), 1.959964, 1e-6);
  EXPECT_NEAR(std_normal_quantile(0.8413447), 1.0, 1e-6);
  EXPECT_NEAR(std_normal_quantile(0.025), -1.959964, 1e-6);
}

TEST(StdNormalQuantile, RejectsOutsideOpenInterval) {
  EXPECT_THROW(std_normal_quantile(0.0), DomainError);
  EXPECT_THROW(std_normal_quantile(1.0), DomainError);
  EXPECT_THROW(std_normal_quantile(-0.1), DomainError);
  EXPECT_THROW(std_normal_quantile(std::numeric_limits<double>::quiet_NaN()), DomainError);
}

TEST(StdNormalQuantile, RoundTripThroughCdf) {
  RngStream rng(11, "quantile_round_trip");
  for (int k = 0; k < 10000; ++k) {
    const double p = 1e-6 + (1.0 - 2e-6) * rng.uniform();
    ASSERT_NEAR(std_normal_cdf(std_normal_quantile(p)).value(), p, 1e-9) << p;
  }
}

TEST(Probability, RejectsValuesOutsideUnitInterval) {
  EXPECT_NO_THROW(Probability(0.0));
  EXPECT_NO_THROW(Probability(1.0));
  EXPECT_THROW(Probability(1.5), DomainError);
  EXPECT_THROW(Probability(-1e-3), DomainError);
}

}  // namespace
}  // namespace cvlm
