#include <cvlm/copula.hpp>

namespace cvlm {

CopulaSample reparam_copula_sample(const CholeskyFactor<double>& chol, const Eigen::VectorXd& eps) {
  CopulaSample out;
  out.q = sample(chol, eps);
  const Eigen::VectorXd sigma = chol.matrix().rowwise().norm();
  out.u.resize(out.q.size());
  for (Eigen::Index i = 0; i < out.q.size(); ++i) out.u[i] = std_normal_cdf(out.q[i] / sigma[i]);
  return out;
}

Eigen::VectorXd probability_integral_transform(const Eigen::VectorXd& z, const Eigen::VectorXd& mu,
                                               const Eigen::VectorXd& sigma) {
  if (z.size() != mu.size() || z.size() != sigma.size()) {
    throw ShapeError("probability_integral_transform: length mismatch");
  }
  Eigen::VectorXd u(z.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (!(sigma[i] > 0.0)) throw DomainError("probability_integral_transform: sigma must be positive");
    u[i] = std_normal_cdf((z[i] - mu[i]) / sigma[i]);
  }
  return u;
}

}  // namespace cvlm
