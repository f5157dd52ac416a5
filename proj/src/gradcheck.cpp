#include <cvlm/gradcheck.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <cvlm/rng.hpp>

namespace cvlm::ad {

double relative_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max(1e-8, std::fabs(analytic) + std::fabs(numeric));
}

namespace {

std::vector<Index> probe_entries(Index size, Index limit, RngStream& rng) {
  std::vector<Index> all(static_cast<std::size_t>(size));
  std::iota(all.begin(), all.end(), Index{0});
  if (limit <= 0 || limit >= size) return all;
  for (Index i = 0; i < limit; ++i) {
    const auto j = i + static_cast<Index>(rng.below(static_cast<std::uint64_t>(size - i)));
    std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
  }
  all.resize(static_cast<std::size_t>(limit));
  std::sort(all.begin(), all.end());
  return all;
}

double evaluate(const LossWithGrad& loss, const std::string& name, Index entry) {
  const double value = loss(false);
  if (!std::isfinite(value)) {
    throw NumericError("finite_diff_check: non-finite loss after perturbing " + name + "[" +
                       std::to_string(entry) + "]");
  }
  return value;
}

}  // namespace

GradientReport finite_diff_check(const LossWithGrad& loss, std::span<Parameter* const> params,
                                 const FiniteDiffOptions& options) {
  for (Parameter* p : params) p->zero_grad();
  const double base = loss(true);
  if (!std::isfinite(base)) throw NumericError("finite_diff_check: non-finite loss at the base point");

  GradientReport report;
  report.tolerance = options.tolerance;
  report.passed = true;
  RngStream rng(options.seed, "finite_diff_entries");
  const double roundoff = std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(base)) / options.step;
  const double abs_floor = options.roundoff_units * roundoff;

  for (Parameter* p : params) {
    TensorGradientCheck check;
    check.name = p->name;
    check.analytic = p->grad;
    check.numeric = Matrix::Constant(p->value.rows(), p->value.cols(), std::numeric_limits<double>::quiet_NaN());
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (Index k : probe_entries(p->value.size(), options.max_entries_per_tensor, rng)) {
      double& x = p->value.data()[k];
      const double saved = x;
      x = saved + options.step;
      const double up = evaluate(loss, p->name, k);
      x = saved - options.step;
      const double down = evaluate(loss, p->name, k);
      x = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double analytic = check.analytic.data()[k];
      check.numeric.data()[k] = numeric;
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
      check.max_abs_error = std::max(check.max_abs_error, std::fabs(analytic - numeric));
      ++check.entries_checked;
    }
    check.relative_error = std::sqrt(diff2) / std::max(1e-8, std::sqrt(a2) + std::sqrt(n2));
    check.passed = check.relative_error <= options.tolerance || check.max_abs_error <= abs_floor;
    report.max_relative_error = std::max(report.max_relative_error, check.relative_error);
    report.passed = report.passed && check.passed;
    report.tensors.push_back(std::move(check));
  }
  return report;
}

}  // namespace cvlm::ad
