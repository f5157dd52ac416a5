#ifndef CVLM_SPECIAL_FUNCTIONS_HPP
#define CVLM_SPECIAL_FUNCTIONS_HPP

// Standard-normal pdf, cdf and quantile in double precision.

#include <cvlm/errors.hpp>

namespace cvlm {

/// A value known to lie in [0, 1].
class Probability {
 public:
  constexpr Probability() = default;
  explicit Probability(double value);

  constexpr double value() const noexcept { return value_; }
  constexpr operator double() const noexcept { return value_; }

 private:
  double value_ = 0.5;
};

inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;
inline constexpr double kLog2Pi = 1.83787706640934548356;

double std_normal_pdf(double x);

/// Phi(x). Stays strictly positive down to x ~ -38.
Probability std_normal_cdf(double x);

/// Phi^-1(p) for p in (0, 1): AS241 rational approximation refined by a
/// Newton step against std_normal_cdf.
double std_normal_quantile(double p);
inline double std_normal_quantile(Probability p) { return std_normal_quantile(p.value()); }

}  // namespace cvlm

#endif  // CVLM_SPECIAL_FUNCTIONS_HPP
