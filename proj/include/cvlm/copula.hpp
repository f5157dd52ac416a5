#ifndef CVLM_COPULA_HPP
#define CVLM_COPULA_HPP

// Gaussian copula density on the structured covariance, the joint posterior
// decomposition  log q(z|x) = log c_Sigma + sum_i log q(z_i|x),  and the two
// sampling transforms (probability integral transform, q = L eps).

#include <cmath>

#include <Eigen/Core>

#include <cvlm/lowrank_cov.hpp>
#include <cvlm/special_functions.hpp>

namespace cvlm {

/// A draw in Gaussian quantile space together with its uniforms
/// u_i = Phi(q_i / sigma_i), sigma_i = sqrt(Sigma_ii).
struct CopulaSample {
  Eigen::VectorXd q;
  Eigen::VectorXd u;
};

namespace detail {

// m_sign = +1 is the copula density. Any other value is a test hook that
// corrupts the quadratic term so the normalization oracle can be shown to fail.
template <typename Scalar, typename Derived>
Scalar log_copula_density_with_sign(const DiagRankOneCov<Scalar>& cov,
                                    const Eigen::MatrixBase<Derived>& q, Scalar m_sign) {
  if (q.size() != cov.dim()) throw ShapeError("log_copula_density: q has wrong length");
  const Vec<Scalar> marginal_var = diag_of(cov);
  const auto qa = q.derived().array().template cast<Scalar>();
  const Scalar sum_log_sigma = Scalar(0.5) * marginal_var.array().log().sum();
  const Scalar diag_form = (qa.square() / marginal_var.array()).sum();
  const Scalar full_form = inv_quadratic_form(cov, q);
  return sum_log_sigma - Scalar(0.5) * log_det(cov) + m_sign * Scalar(0.5) * (diag_form - full_form);
}

}  // namespace detail

/// log c_Sigma(q) = sum_i log sigma_i - 1/2 log|Sigma| + 1/2 q^T (D^-1 - Sigma^-1) q
/// with D = diag(Sigma) and sigma_i = sqrt(Sigma_ii).
template <typename Scalar, typename Derived>
Scalar log_copula_density(const DiagRankOneCov<Scalar>& cov, const Eigen::MatrixBase<Derived>& q) {
  return detail::log_copula_density_with_sign(cov, q, Scalar(1));
}

/// sum_i log N(z_i; mu_i, sigma_i^2).
template <typename Scalar, typename D1, typename D2, typename D3>
Scalar gaussian_log_marginals_sum(const Eigen::MatrixBase<D1>& mu, const Eigen::MatrixBase<D2>& sigma,
                                  const Eigen::MatrixBase<D3>& z) {
  if (mu.size() != sigma.size() || mu.size() != z.size()) {
    throw ShapeError("gaussian_log_marginals_sum: length mismatch");
  }
  Scalar total(0);
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const Scalar s = sigma[i];
    if (!(s > Scalar(0))) throw DomainError("gaussian_log_marginals_sum: sigma must be positive");
    const Scalar r = (Scalar(z[i]) - Scalar(mu[i])) / s;
    total += -std::log(s) - Scalar(0.5) * r * r;
  }
  return total - Scalar(0.5) * Scalar(mu.size()) * Scalar(kLog2Pi);
}

/// log c_Sigma(q) + sum_i log q(z_i | x).
template <typename Scalar, typename D1, typename D2, typename D3, typename D4>
Scalar joint_log_posterior(const Eigen::MatrixBase<D1>& mu, const Eigen::MatrixBase<D2>& sigma,
                           const DiagRankOneCov<Scalar>& cov, const Eigen::MatrixBase<D3>& z,
                           const Eigen::MatrixBase<D4>& q) {
  return log_copula_density(cov, q) + gaussian_log_marginals_sum<Scalar>(mu, sigma, z);
}

/// q = L eps, with the companion uniforms.
CopulaSample reparam_copula_sample(const CholeskyFactor<double>& chol, const Eigen::VectorXd& eps);

/// u_i = Phi((z_i - mu_i) / sigma_i).
Eigen::VectorXd probability_integral_transform(const Eigen::VectorXd& z, const Eigen::VectorXd& mu,
                                               const Eigen::VectorXd& sigma);

}  // namespace cvlm

#endif  // CVLM_COPULA_HPP
