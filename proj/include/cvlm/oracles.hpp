#ifndef CVLM_ORACLES_HPP
#define CVLM_ORACLES_HPP

// Brute-force references for the fast paths: O(d^3) dense linear algebra,
// adaptive 2-D cubature in copula space, and Monte-Carlo estimators.
// Nothing here calls into lowrank_cov, special_functions or rng.

#include <cstdint>
#include <functional>

#include <Eigen/Core>

namespace cvlm::oracle {

struct DenseReference {
  double logdet = 0.0;
  Eigen::MatrixXd inverse;
  Eigen::MatrixXd cholesky;  // lower
};

/// diag(w) + a a^T assembled entry by entry.
Eigen::MatrixXd dense_covariance(const Eigen::VectorXd& w, const Eigen::VectorXd& a);

/// Gaussian elimination with partial pivoting for logdet, Gauss-Jordan for the
/// inverse and the Cholesky-Banachiewicz recurrence. Throws OracleError on a
/// (numerically) singular or non-SPD input, or d > 256.
DenseReference dense_reference(const Eigen::MatrixXd& sigma);
DenseReference dense_reference(const Eigen::VectorXd& w, const Eigen::VectorXd& a);

/// Gaussian copula log density computed densely; independent of the fast path.
double dense_log_copula_density(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& q);

struct QuadratureSpec {
  /// Initial cells per axis.
  int resolution = 16;
  double lower = 1e-6;
  double upper = 1.0 - 1e-6;
  /// Absolute error target for the integral over the clipped square.
  double tolerance = 1e-6;
  int max_cells = 200000;
};

struct QuadratureResult {
  double value = 0.0;
  /// Cubature error estimate plus the mass outside the clipped square.
  double error = 0.0;
  double excluded_mass = 0.0;
  int cells = 0;
};

/// Integrates exp(log_density(q)) over u in [lower, upper]^2 with
/// q_i = sigma_i * Phi^-1(u_i); each cell uses a 15-point Kronrod tensor rule
/// with the embedded 7-point Gauss rule as error estimate, and the cell with
/// the largest error is split in four until the total error meets the target.
/// Throws OracleError (carrying the estimate) when max_cells is exhausted.
QuadratureResult copula_normalization_2d(const std::function<double(const Eigen::Vector2d&)>& log_density,
                                         const Eigen::Vector2d& sigma, const QuadratureSpec& spec = {});

struct MonteCarloEstimate {
  double mean = 0.0;
  double standard_error = 0.0;
};

/// (1/n) sum log q(z) - log p(z), z ~ N(mu, diag(exp(logvar))), p = N(0, I).
MonteCarloEstimate mc_kl_estimate(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar, std::int64_t n,
                                  std::uint64_t seed);
/// Same estimator for q = N(mu, sigma) with a dense covariance.
MonteCarloEstimate mc_kl_estimate_fullcov(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma, std::int64_t n,
                                          std::uint64_t seed);

struct MonteCarloCovariance {
  Eigen::MatrixXd covariance;
  /// Entrywise standard error of `covariance`.
  Eigen::MatrixXd standard_error;
};

/// Sample covariance (mean known to be zero) of n draws of L eps.
MonteCarloCovariance mc_covariance(const Eigen::MatrixXd& lower, std::int64_t n, std::uint64_t seed);

}  // namespace cvlm::oracle

#endif  // CVLM_ORACLES_HPP
