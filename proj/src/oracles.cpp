#include <cvlm/oracles.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>

#include <cvlm/errors.hpp>

namespace cvlm::oracle {
namespace {

constexpr Eigen::Index kMaxDenseDim = 256;

void require_square(const Eigen::MatrixXd& m, const char* who) {
  if (m.rows() != m.cols() || m.rows() < 1) throw ShapeError(std::string(who) + ": matrix must be square and non-empty");
  if (m.rows() > kMaxDenseDim) throw OracleError(std::string(who) + ": dimension above 256");
}

double lu_logdet(Eigen::MatrixXd m) {
  const Eigen::Index n = m.rows();
  const double scale = m.cwiseAbs().maxCoeff();
  double logdet = 0.0;
  int sign = 1;
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index p = k;
    for (Eigen::Index i = k + 1; i < n; ++i) {
      if (std::abs(m(i, k)) > std::abs(m(p, k))) p = i;
    }
    if (std::abs(m(p, k)) <= 1e-14 * scale) throw OracleError("dense_reference: singular matrix");
    if (p != k) {
      m.row(p).swap(m.row(k));
      sign = -sign;
    }
    for (Eigen::Index i = k + 1; i < n; ++i) {
      const double f = m(i, k) / m(k, k);
      for (Eigen::Index j = k; j < n; ++j) m(i, j) -= f * m(k, j);
    }
    if (m(k, k) < 0) sign = -sign;
    logdet += std::log(std::abs(m(k, k)));
  }
  if (sign < 0) throw OracleError("dense_reference: negative determinant");
  return logdet;
}

Eigen::MatrixXd gauss_jordan_inverse(Eigen::MatrixXd m) {
  const Eigen::Index n = m.rows();
  const double scale = m.cwiseAbs().maxCoeff();
  Eigen::MatrixXd inv = Eigen::MatrixXd::Identity(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index p = k;
    for (Eigen::Index i = k + 1; i < n; ++i) {
      if (std::abs(m(i, k)) > std::abs(m(p, k))) p = i;
    }
    if (std::abs(m(p, k)) <= 1e-14 * scale) throw OracleError("dense_reference: singular matrix");
    m.row(p).swap(m.row(k));
    inv.row(p).swap(inv.row(k));
    const double pivot = m(k, k);
    m.row(k) /= pivot;
    inv.row(k) /= pivot;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i == k) continue;
      const double f = m(i, k);
      if (f == 0.0) continue;
      m.row(i) -= f * m.row(k);
      inv.row(i) -= f * inv.row(k);
    }
  }
  return inv;
}

Eigen::MatrixXd banachiewicz(const Eigen::MatrixXd& m) {
  const Eigen::Index n = m.rows();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      double s = m(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      if (i == j) {
        if (!(s > 0.0)) throw OracleError("dense_reference: matrix is not positive definite at pivot " + std::to_string(i));
        l(i, i) = std::sqrt(s);
      } else {
        l(i, j) = s / l(j, j);
      }
    }
  }
  return l;
}

double inverse_normal_cdf(double u) { return -std::sqrt(2.0) * boost::math::erfc_inv(2.0 * u); }

// 15-point Kronrod nodes on [-1, 1] with weights, and the embedded 7-point
// Gauss weights at the same positions (zero where a node is Kronrod-only).
struct Rule {
  std::array<double, 15> x{};
  std::array<double, 15> wk{};
  std::array<double, 15> wg{};
};

Rule make_rule() {
  using boost::math::quadrature::gauss;
  using boost::math::quadrature::gauss_kronrod;
  const auto& kx = gauss_kronrod<double, 15>::abscissa();
  const auto& kw = gauss_kronrod<double, 15>::weights();
  const auto& gx = gauss<double, 7>::abscissa();
  const auto& gw = gauss<double, 7>::weights();
  Rule r;
  std::size_t n = 0;
  for (std::size_t i = 0; i < kx.size(); ++i) {
    double g = 0.0;
    for (std::size_t k = 0; k < gx.size(); ++k) {
      if (std::abs(gx[k] - kx[i]) < 1e-14) g = gw[k];
    }
    r.x[n] = kx[i];
    r.wk[n] = kw[i];
    r.wg[n] = g;
    ++n;
    if (kx[i] != 0.0) {
      r.x[n] = -kx[i];
      r.wk[n] = kw[i];
      r.wg[n] = g;
      ++n;
    }
  }
  return r;
}

struct Cell {
  double x0, x1, y0, y1;
  double value;
  double error;
  bool operator<(const Cell& o) const { return error < o.error; }
};

}  // namespace

Eigen::MatrixXd dense_covariance(const Eigen::VectorXd& w, const Eigen::VectorXd& a) {
  if (w.size() != a.size()) throw ShapeError("dense_covariance: length mismatch");
  const Eigen::Index d = w.size();
  Eigen::MatrixXd s(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) s(i, j) = a[i] * a[j] + (i == j ? w[i] : 0.0);
  }
  return s;
}

DenseReference dense_reference(const Eigen::MatrixXd& sigma) {
  require_square(sigma, "dense_reference");
  if (!sigma.allFinite()) throw OracleError("dense_reference: non-finite entry");
  DenseReference out;
  out.logdet = lu_logdet(sigma);
  out.inverse = gauss_jordan_inverse(sigma);
  out.cholesky = banachiewicz(sigma);
  return out;
}

DenseReference dense_reference(const Eigen::VectorXd& w, const Eigen::VectorXd& a) {
  return dense_reference(dense_covariance(w, a));
}

double dense_log_copula_density(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& q) {
  const DenseReference ref = dense_reference(sigma);
  if (q.size() != sigma.rows()) throw ShapeError("dense_log_copula_density: q has wrong length");
  double out = -0.5 * ref.logdet;
  for (Eigen::Index i = 0; i < q.size(); ++i) out += 0.5 * std::log(sigma(i, i)) + 0.5 * q[i] * q[i] / sigma(i, i);
  out -= 0.5 * q.dot(ref.inverse * q);
  return out;
}

QuadratureResult copula_normalization_2d(const std::function<double(const Eigen::Vector2d&)>& log_density,
                                         const Eigen::Vector2d& sigma, const QuadratureSpec& spec) {
  if (spec.resolution < 16) throw ConfigError("QuadratureSpec: resolution must be >= 16");
  if (!(spec.tolerance > 0.0)) throw ConfigError("QuadratureSpec: tolerance must be positive");
  if (!(spec.lower > 0.0 && spec.lower < spec.upper && spec.upper < 1.0)) {
    throw ConfigError("QuadratureSpec: need 0 < lower < upper < 1");
  }
  if (!(sigma.array() > 0.0).all()) throw DomainError("copula_normalization_2d: sigma must be positive");

  static const Rule rule = make_rule();
  auto integrate = [&](double x0, double x1, double y0, double y1) {
    const double hx = 0.5 * (x1 - x0), cx = 0.5 * (x1 + x0);
    const double hy = 0.5 * (y1 - y0), cy = 0.5 * (y1 + y0);
    std::array<double, 15> qx{}, qy{};
    for (std::size_t i = 0; i < 15; ++i) {
      qx[i] = sigma[0] * inverse_normal_cdf(cx + hx * rule.x[i]);
      qy[i] = sigma[1] * inverse_normal_cdf(cy + hy * rule.x[i]);
    }
    double kron = 0.0, gaussian = 0.0;
    for (std::size_t i = 0; i < 15; ++i) {
      for (std::size_t j = 0; j < 15; ++j) {
        const double f = std::exp(log_density(Eigen::Vector2d(qx[i], qy[j])));
        kron += rule.wk[i] * rule.wk[j] * f;
        gaussian += rule.wg[i] * rule.wg[j] * f;
      }
    }
    kron *= hx * hy;
    gaussian *= hx * hy;
    return Cell{x0, x1, y0, y1, kron, std::abs(kron - gaussian)};
  };

  std::priority_queue<Cell> cells;
  const double step = (spec.upper - spec.lower) / spec.resolution;
  for (int i = 0; i < spec.resolution; ++i) {
    for (int j = 0; j < spec.resolution; ++j) {
      const double x0 = spec.lower + i * step, y0 = spec.lower + j * step;
      const double x1 = i + 1 == spec.resolution ? spec.upper : x0 + step;
      const double y1 = j + 1 == spec.resolution ? spec.upper : y0 + step;
      cells.push(integrate(x0, x1, y0, y1));
    }
  }

  auto totals = [&] {
    // Summing a copy keeps the result independent of split history drift.
    auto copy = cells;
    double v = 0.0, e = 0.0;
    while (!copy.empty()) {
      v += copy.top().value;
      e += copy.top().error;
      copy.pop();
    }
    return std::pair{v, e};
  };

  auto [value, error] = totals();
  int since_resum = 0;
  while (error > spec.tolerance) {
    if (static_cast<int>(cells.size()) + 3 > spec.max_cells) {
      throw OracleError("copula_normalization_2d: refinement did not converge (estimate " + std::to_string(value) +
                            ", error " + std::to_string(error) + ")",
                        value);
    }
    const Cell c = cells.top();
    cells.pop();
    const double mx = 0.5 * (c.x0 + c.x1), my = 0.5 * (c.y0 + c.y1);
    const Cell parts[4] = {integrate(c.x0, mx, c.y0, my), integrate(mx, c.x1, c.y0, my),
                           integrate(c.x0, mx, my, c.y1), integrate(mx, c.x1, my, c.y1)};
    value -= c.value;
    error -= c.error;
    for (const Cell& p : parts) {
      value += p.value;
      error += p.error;
      cells.push(p);
    }
    if (++since_resum == 256) {
      std::tie(value, error) = totals();
      since_resum = 0;
    }
  }
  std::tie(value, error) = totals();

  QuadratureResult out;
  out.value = value;
  // Uniform marginals: each of the four clipped strips carries at most its width.
  out.excluded_mass = 2.0 * (spec.lower + (1.0 - spec.upper));
  out.error = error + out.excluded_mass;
  out.cells = static_cast<int>(cells.size());
  return out;
}

MonteCarloEstimate mc_kl_estimate(const Eigen::VectorXd& mu, const Eigen::VectorXd& logvar, std::int64_t n,
                                  std::uint64_t seed) {
  if (mu.size() != logvar.size()) throw ShapeError("mc_kl_estimate: length mismatch");
  if (n < 10000) throw ConfigError("mc_kl_estimate: need at least 10^4 samples");
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal;
  const Eigen::VectorXd sd = (0.5 * logvar.array()).exp();
  double sum = 0.0, sum_sq = 0.0;
  for (std::int64_t s = 0; s < n; ++s) {
    double term = 0.0;
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
      const double eps = normal(engine);
      const double z = mu[i] + sd[i] * eps;
      // log N(z; mu, sd^2) - log N(z; 0, 1)
      term += -0.5 * logvar[i] - 0.5 * eps * eps + 0.5 * z * z;
    }
    sum += term;
    sum_sq += term * term;
  }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

MonteCarloEstimate mc_kl_estimate_fullcov(const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma, std::int64_t n,
                                          std::uint64_t seed) {
  if (sigma.rows() != mu.size()) throw ShapeError("mc_kl_estimate_fullcov: length mismatch");
  if (n < 10000) throw ConfigError("mc_kl_estimate_fullcov: need at least 10^4 samples");
  const DenseReference ref = dense_reference(sigma);
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal;
  const Eigen::Index d = mu.size();
  Eigen::VectorXd eps(d);
  double sum = 0.0, sum_sq = 0.0;
  for (std::int64_t s = 0; s < n; ++s) {
    for (Eigen::Index i = 0; i < d; ++i) eps[i] = normal(engine);
    const Eigen::VectorXd dz = ref.cholesky * eps;
    const Eigen::VectorXd z = mu + dz;
    const double term = -0.5 * ref.logdet - 0.5 * dz.dot(ref.inverse * dz) + 0.5 * z.squaredNorm();
    sum += term;
    sum_sq += term * term;
  }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
  return {mean, std::sqrt(var / static_cast<double>(n))};
}

MonteCarloCovariance mc_covariance(const Eigen::MatrixXd& lower, std::int64_t n, std::uint64_t seed) {
  if (lower.rows() != lower.cols()) throw ShapeError("mc_covariance: factor must be square");
  if (n < 10000) throw ConfigError("mc_covariance: need at least 10^4 samples");
  const Eigen::Index d = lower.rows();
  std::mt19937_64 engine(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd first = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd eps(d);
  for (std::int64_t s = 0; s < n; ++s) {
    for (Eigen::Index i = 0; i < d; ++i) eps[i] = normal(engine);
    const Eigen::VectorXd x = lower * eps;
    const Eigen::MatrixXd outer = x * x.transpose();
    first += outer;
    second += outer.cwiseProduct(outer);
  }
  const auto nd = static_cast<double>(n);
  MonteCarloCovariance out;
  out.covariance = first / nd;
  out.standard_error =
      ((second / nd - out.covariance.cwiseProduct(out.covariance)).cwiseMax(0.0) / nd).cwiseSqrt();
  return out;
}

}  // namespace cvlm::oracle
