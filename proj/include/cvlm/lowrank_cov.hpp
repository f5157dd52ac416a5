#ifndef CVLM_LOWRANK_COV_HPP
#define CVLM_LOWRANK_COV_HPP

// Covariance matrices of the form  Sigma = diag(w) + a a^T  and the O(d)
// identities they admit: rank-one Cholesky, matrix determinant lemma and
// Sherman-Morrison quadratic forms.

#include <cmath>
#include <string>
#include <utility>

#include <Eigen/Core>

#include <cvlm/errors.hpp>

namespace cvlm {

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
class DiagRankOneCov {
 public:
  using Vector = Vec<Scalar>;

  DiagRankOneCov(Vector w, Vector a) : w_(std::move(w)), a_(std::move(a)) {
    if (w_.size() < 1) throw ShapeError("DiagRankOneCov: dimension must be >= 1");
    if (w_.size() != a_.size()) throw ShapeError("DiagRankOneCov: w and a differ in length");
    for (Eigen::Index i = 0; i < w_.size(); ++i) {
      if (!(w_[i] > Scalar(0)) || !std::isfinite(w_[i])) {
        throw DomainError("DiagRankOneCov: w[" + std::to_string(i) + "] must be positive and finite");
      }
      if (!std::isfinite(a_[i])) {
        throw DomainError("DiagRankOneCov: a[" + std::to_string(i) + "] is not finite");
      }
    }
  }

  /// Sigma = w I + a a^T with a single shared diagonal weight.
  static DiagRankOneCov with_scalar_w(Scalar w, Vector a) {
    Vector wv = Vector::Constant(a.size(), w);
    return DiagRankOneCov(std::move(wv), std::move(a));
  }

  Eigen::Index dim() const noexcept { return w_.size(); }
  const Vector& w() const noexcept { return w_; }
  const Vector& a() const noexcept { return a_; }

 private:
  Vector w_;
  Vector a_;
};

template <typename Scalar>
class CholeskyFactor {
 public:
  explicit CholeskyFactor(Mat<Scalar> lower) : lower_(std::move(lower)) {
    if (lower_.rows() != lower_.cols()) throw ShapeError("CholeskyFactor: matrix must be square");
  }
  Eigen::Index dim() const noexcept { return lower_.rows(); }
  const Mat<Scalar>& matrix() const noexcept { return lower_; }

 private:
  Mat<Scalar> lower_;
};

/// Compact form of the Cholesky factor of diag(w) + a a^T:
///   L_kk = diag[k],  L_ik = a_i * g[k]  for i > k.
/// pivot[k] = diag[k]^2 and rho[k] is the rank-one weight left in the Schur
/// complement before column k is eliminated (rho[0] = 1).
template <typename Scalar>
struct RankOneCholeskyTerms {
  Vec<Scalar> diag;
  Vec<Scalar> g;
  Vec<Scalar> pivot;
  Vec<Scalar> rho;
};

template <typename Scalar>
RankOneCholeskyTerms<Scalar> rank_one_cholesky_terms(const DiagRankOneCov<Scalar>& cov) {
  const Eigen::Index d = cov.dim();
  const auto& w = cov.w();
  const auto& a = cov.a();
  RankOneCholeskyTerms<Scalar> t{Vec<Scalar>(d), Vec<Scalar>(d), Vec<Scalar>(d), Vec<Scalar>(d)};
  Scalar rho(1);
  for (Eigen::Index k = 0; k < d; ++k) {
    const Scalar p = w[k] + rho * a[k] * a[k];
    if (!(p > Scalar(0)) || !std::isfinite(p)) {
      throw FactorizationError("cholesky: non-positive pivot at index " + std::to_string(k), k);
    }
    const Scalar s = std::sqrt(p);
    t.rho[k] = rho;
    t.pivot[k] = p;
    t.diag[k] = s;
    t.g[k] = rho * a[k] / s;
    rho = rho * w[k] / p;
  }
  return t;
}

/// Lower Cholesky factor in O(d^2) (O(d) arithmetic, dense output).
template <typename Scalar>
CholeskyFactor<Scalar> cholesky(const DiagRankOneCov<Scalar>& cov) {
  const auto t = rank_one_cholesky_terms(cov);
  const Eigen::Index d = cov.dim();
  Mat<Scalar> lower = Mat<Scalar>::Zero(d, d);
  for (Eigen::Index k = 0; k < d; ++k) {
    lower(k, k) = t.diag[k];
    for (Eigen::Index i = k + 1; i < d; ++i) lower(i, k) = cov.a()[i] * t.g[k];
  }
  return CholeskyFactor<Scalar>(std::move(lower));
}

/// log|Sigma| by the matrix determinant lemma.
template <typename Scalar>
Scalar log_det(const DiagRankOneCov<Scalar>& cov) {
  const auto& w = cov.w();
  const auto& a = cov.a();
  return w.array().log().sum() + std::log1p((a.array().square() / w.array()).sum());
}

/// q^T Sigma^-1 q by Sherman-Morrison.
template <typename Scalar, typename Derived>
Scalar inv_quadratic_form(const DiagRankOneCov<Scalar>& cov, const Eigen::MatrixBase<Derived>& q) {
  if (q.size() != cov.dim()) throw ShapeError("inv_quadratic_form: q has wrong length");
  const auto w = cov.w().array();
  const auto a = cov.a().array();
  const auto qa = q.derived().array().template cast<Scalar>();
  const Scalar head = (qa.square() / w).sum();
  const Scalar cross = (a * qa / w).sum();
  const Scalar denom = Scalar(1) + (a.square() / w).sum();
  const Scalar value = head - cross * cross / denom;
  return value < Scalar(0) ? Scalar(0) : value;
}

/// Diagonal of Sigma: w_i + a_i^2.
template <typename Scalar>
Vec<Scalar> diag_of(const DiagRankOneCov<Scalar>& cov) {
  return (cov.w().array() + cov.a().array().square()).matrix();
}

/// L eps.
template <typename Scalar, typename Derived>
Vec<Scalar> sample(const CholeskyFactor<Scalar>& chol, const Eigen::MatrixBase<Derived>& eps) {
  if (eps.size() != chol.dim()) throw ShapeError("sample: eps has wrong length");
  return chol.matrix().template triangularView<Eigen::Lower>() * eps.derived().template cast<Scalar>();
}

template <typename Scalar>
Mat<Scalar> dense(const DiagRankOneCov<Scalar>& cov) {
  Mat<Scalar> sigma = cov.a() * cov.a().transpose();
  sigma.diagonal() += cov.w();
  return sigma;
}

}  // namespace cvlm

#endif  // CVLM_LOWRANK_COV_HPP
