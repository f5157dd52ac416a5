#ifndef CVLM_OBJECTIVE_HPP
#define CVLM_OBJECTIVE_HPP

// ELBO pieces and the copula-regularized objective
//   L' = L + lambda (log c_Sigma + sum_i log q(z_i|x)),
// expressed as a quantity to minimize:
//   modified_objective = rec_nll + anneal_w * kl - lambda * (log_copula + sum_log_marginals).

#include <cstdint>

#include <Eigen/Core>

#include <cvlm/lowrank_cov.hpp>

namespace cvlm {

/// KL(N(mu, diag(exp(logvar))) || N(0, I)).
template <typename D1, typename D2>
double kl_diag_gaussian_std_normal(const Eigen::MatrixBase<D1>& mu, const Eigen::MatrixBase<D2>& logvar) {
  if (mu.size() != logvar.size()) throw ShapeError("kl_diag_gaussian_std_normal: length mismatch");
  const auto m = mu.derived().array();
  const auto lv = logvar.derived().array();
  const double kl = -0.5 * (1.0 + lv - m.square() - lv.exp()).sum();
  return kl < 0.0 ? 0.0 : kl;
}

/// KL(N(mu, diag(w) + a a^T) || N(0, I)).
template <typename Derived>
double kl_fullcov_gaussian_std_normal(const Eigen::MatrixBase<Derived>& mu, const DiagRankOneCov<double>& cov) {
  if (mu.size() != cov.dim()) throw ShapeError("kl_fullcov_gaussian_std_normal: length mismatch");
  const double trace = diag_of(cov).sum();
  const double kl = 0.5 * (trace + mu.squaredNorm() - static_cast<double>(cov.dim()) - log_det(cov));
  return kl < 0.0 ? 0.0 : kl;
}

/// Linear ramp from start_weight to 1 over warmup_steps.
struct AnnealSchedule {
  std::int64_t warmup_steps = 0;
  double start_weight = 0.0;
};

double anneal_weight(std::int64_t step, const AnnealSchedule& schedule);

/// All quantities in nats (per sentence or summed, as the caller decides).
struct LossBreakdown {
  double rec_nll = 0.0;
  double kl = 0.0;
  double log_copula = 0.0;
  double sum_log_marginals = 0.0;
  double elbo_nll = 0.0;
  double modified_objective = 0.0;
};

LossBreakdown compose_loss(double rec_nll, double kl, double log_copula, double sum_log_marginals, double lambda,
                           double anneal_w);

}  // namespace cvlm

#endif  // CVLM_OBJECTIVE_HPP
