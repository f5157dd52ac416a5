#ifndef CVLM_GRADCHECK_HPP
#define CVLM_GRADCHECK_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <cvlm/autodiff.hpp>

namespace cvlm::ad {

/// Per-tensor comparison. Entries that were not probed hold NaN in `numeric`.
struct TensorGradientCheck {
  std::string name;
  Matrix analytic;
  Matrix numeric;
  Index entries_checked = 0;
  /// ||g_a - g_n|| / max(1e-8, ||g_a|| + ||g_n||) over the probed entries.
  double relative_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = false;
};

struct GradientReport {
  std::vector<TensorGradientCheck> tensors;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// |a - n| / max(1e-8, |a| + |n|).
double relative_error(double analytic, double numeric);

struct FiniteDiffOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  /// A tensor whose largest absolute disagreement is at most this many units of
  /// the central-difference roundoff (eps * max(1, |loss|) / step) also passes.
  /// 0 disables.
  double roundoff_units = 0.0;
  /// Probe at most this many entries per tensor (chosen by `seed`); <= 0 probes all.
  Index max_entries_per_tensor = 0;
  std::uint64_t seed = 0;
};

/// Evaluates the loss at the current parameter values. When `with_grad` is set
/// it must also leave d(loss)/d(param) in every Parameter::grad.
using LossWithGrad = std::function<double(bool with_grad)>;

/// Central-difference check of the analytic gradient of `loss` for every
/// tensor in `params`. Parameter values are restored on return.
GradientReport finite_diff_check(const LossWithGrad& loss, std::span<Parameter* const> params,
                                 const FiniteDiffOptions& options = {});

}  // namespace cvlm::ad

#endif  // CVLM_GRADCHECK_HPP
