#include <cmath>

#include <Eigen/Cholesky>
#include <gtest/gtest.h>

#include <cvlm/copula.hpp>
#include <cvlm/oracles.hpp>
#include <cvlm/rng.hpp>

namespace cvlm {
namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

VectorXd vec(std::initializer_list<double> xs) {
  VectorXd v(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

TEST(LogCopulaDensity, IdentityCovarianceIsZero) {
  const auto c = DiagRankOneCov<double>::with_scalar_w(1.0, VectorXd::Zero(3));
  EXPECT_EQ(log_copula_density(c, vec({0.4, -3.0, 1.1})), 0.0);
}

TEST(LogCopulaDensity, WorkedTwoDimensionalValue) {
  const DiagRankOneCov<double> c(vec({1, 1}), vec({0.6, 0.8}));
  const double expected = 0.5 * std::log(1.36 * 1.64 / 2.0);
  EXPECT_NEAR(log_copula_density(c, VectorXd::Zero(2)), expected, 1e-15);
  EXPECT_NEAR(log_copula_density(c, VectorXd::Zero(2)), 0.0545169, 1e-7);
}

TEST(LogCopulaDensity, DiagonalCovarianceIsZeroEverywhere) {
  RngStream rng(3, "copula_independence");
  for (int k = 0; k < 200; ++k) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.below(32));
    const DiagRankOneCov<double> c(rng.uniform_matrix(d, 1, 0.05, 4.0), VectorXd::Zero(d));
    ASSERT_NEAR(log_copula_density(c, VectorXd(3.0 * rng.normal_matrix(d, 1))), 0.0, 1e-12);
  }
}

TEST(LogCopulaDensity, RejectsWrongLength) {
  const DiagRankOneCov<double> c(vec({1, 1}), vec({0.6, 0.8}));
  EXPECT_THROW(log_copula_density(c, VectorXd::Zero(3)), ShapeError);
}

TEST(LogCopulaDensity, AgreesWithDenseEvaluation) {
  RngStream rng(5, "copula_dense");
  for (int k = 0; k < 200; ++k) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.below(32));
    const VectorXd w = rng.uniform_matrix(d, 1, 0.1, 3.0);
    const VectorXd a = rng.uniform_matrix(d, 1, -1.5, 1.5);
    const VectorXd q = rng.normal_matrix(d, 1);
    const double fast = log_copula_density(DiagRankOneCov<double>(w, a), q);
    const double ref = oracle::dense_log_copula_density(oracle::dense_covariance(w, a), q);
    ASSERT_NEAR(fast, ref, 1e-9 * std::max(1.0, std::abs(ref)));
  }
}

TEST(LogCopulaDensity, SklarDecompositionOfGaussian) {
  RngStream rng(8, "sklar");
  for (int k = 0; k < 100; ++k) {
    const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.below(16));
    const VectorXd w = rng.uniform_matrix(d, 1, 0.2, 2.0);
    const VectorXd a = rng.uniform_matrix(d, 1, -1.0, 1.0);
    const VectorXd mu = rng.normal_matrix(d, 1);
    const VectorXd q = rng.normal_matrix(d, 1);
    const DiagRankOneCov<double> c(w, a);
    const VectorXd sigma = diag_of(c).cwiseSqrt();
    const VectorXd z = q + mu;
    const double split = log_copula_density(c, q) + gaussian_log_marginals_sum<double>(mu, sigma, z);

    const MatrixXd s = oracle::dense_covariance(w, a);
    const Eigen::LLT<MatrixXd> llt(s);
    const VectorXd r = llt.matrixL().solve(z - mu);
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double joint = -0.5 * (static_cast<double>(d) * std::log(2 * M_PI) + log_det + r.squaredNorm());
    ASSERT_NEAR(split, joint, 1e-9);
  }
}

TEST(LogCopulaDensity, IntegratesToOneOverUnitSquare) {
  const VectorXd w = vec({1, 1});
  const VectorXd a = vec({0.6, 0.8});
  const DiagRankOneCov<double> c(w, a);
  const VectorXd sd = diag_of(c).cwiseSqrt();
  auto density = [&](const Eigen::Vector2d& q) { return log_copula_density(c, q); };
  const oracle::QuadratureResult r = oracle::copula_normalization_2d(density, Eigen::Vector2d(sd[0], sd[1]));
  EXPECT_NEAR(r.value, 1.0, 1e-3);
}

TEST(ReparamCopulaSample, IdentityFactorAndZeroNoise) {
  const VectorXd eps = vec({0.3, -1.0});
  const CopulaSample s = reparam_copula_sample(CholeskyFactor<double>(MatrixXd::Identity(2, 2)), eps);
  EXPECT_EQ(s.q, eps);
  EXPECT_NEAR(s.u[0], std_normal_cdf(0.3).value(), 1e-15);
  const CopulaSample zero = reparam_copula_sample(cholesky(DiagRankOneCov<double>(vec({2, 3}), vec({1, 1}))),
                                                  VectorXd::Zero(2));
  EXPECT_EQ(zero.q, VectorXd::Zero(2));
  EXPECT_EQ(zero.u, VectorXd::Constant(2, 0.5));
}

TEST(ReparamCopulaSample, EmpiricalCovarianceMatchesSigma) {
  const VectorXd w = vec({0.5, 1.2, 2.0});
  const VectorXd a = vec({0.9, -0.7, 1.1});
  const CholeskyFactor<double> l = cholesky(DiagRankOneCov<double>(w, a));
  RngStream rng(21, "copula_sampling");
  const int n = 100000;
  MatrixXd acc = MatrixXd::Zero(3, 3);
  for (int k = 0; k < n; ++k) {
    const VectorXd q = reparam_copula_sample(l, rng.normal_matrix(3, 1)).q;
    acc += q * q.transpose();
  }
  const MatrixXd emp = acc / n;
  const MatrixXd sigma = oracle::dense_covariance(w, a);
  EXPECT_LE(((emp - sigma).array() / sigma.array()).abs().maxCoeff(), 0.05);
}

TEST(GaussianLogMarginalsSum, KnownValues) {
  EXPECT_NEAR(gaussian_log_marginals_sum<double>(vec({0}), vec({1}), vec({0})), -0.91894, 1e-5);
  const VectorXd mu = vec({0.4, -2.0});
  const VectorXd sigma = vec({0.5, 3.0});
  EXPECT_NEAR(gaussian_log_marginals_sum<double>(mu, sigma, mu), -std::log(0.5) - std::log(3.0) - std::log(2 * M_PI),
              1e-14);
}

TEST(GaussianLogMarginalsSum, EqualsLogOfPdfProduct) {
  RngStream rng(2, "marginals");
  const VectorXd mu = rng.normal_matrix(5, 1);
  const VectorXd sigma = rng.uniform_matrix(5, 1, 0.3, 2.0);
  const VectorXd z = rng.normal_matrix(5, 1);
  double product = 1.0;
  for (int i = 0; i < 5; ++i) product *= std_normal_pdf((z[i] - mu[i]) / sigma[i]) / sigma[i];
  EXPECT_NEAR(gaussian_log_marginals_sum<double>(mu, sigma, z), std::log(product), 1e-12);
}

TEST(GaussianLogMarginalsSum, RejectsNonPositiveSigma) {
  EXPECT_THROW(gaussian_log_marginals_sum<double>(vec({0, 0}), vec({1, 0}), vec({0, 0})), DomainError);
  EXPECT_THROW(gaussian_log_marginals_sum<double>(vec({0, 0}), vec({1, -1}), vec({0, 0})), DomainError);
}

TEST(JointLogPosterior, IndependentCaseReducesToMarginals) {
  const VectorXd mu = vec({0.1, 0.2, -0.5});
  const VectorXd sigma = vec({1.0, 0.5, 2.0});
  const VectorXd z = vec({0.3, 0.0, 1.0});
  const DiagRankOneCov<double> c(vec({1.0, 2.0, 0.7}), VectorXd::Zero(3));
  EXPECT_EQ(joint_log_posterior(mu, sigma, c, z, vec({0.4, -1.0, 0.2})),
            gaussian_log_marginals_sum<double>(mu, sigma, z));
}

TEST(ProbabilityIntegralTransform, KnownValues) {
  const VectorXd mu = vec({0.3, -1.0});
  const VectorXd sigma = vec({2.0, 0.5});
  EXPECT_EQ(probability_integral_transform(mu, mu, sigma), VectorXd::Constant(2, 0.5));
  const VectorXd u = probability_integral_transform(mu + sigma, mu, sigma);
  EXPECT_NEAR(u[0], 0.8413447, 1e-7);
  EXPECT_NEAR(u[1], 0.8413447, 1e-7);
  EXPECT_THROW(probability_integral_transform(mu, mu, vec({1.0, 0.0})), DomainError);
}

}  // namespace
}  // namespace cvlm
