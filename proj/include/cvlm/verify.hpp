#ifndef CVLM_VERIFY_HPP
#define CVLM_VERIFY_HPP

// The oracle suite: each check compares a fast path against an independent
// reference and reports its worst observed discrepancy.

#include <cstdint>
#include <string>
#include <vector>

#include <cvlm/gradcheck.hpp>

namespace cvlm {

struct CheckResult {
  std::string name;
  bool passed = false;
  /// Worst discrepancy observed, in the units of `threshold`.
  double worst = 0.0;
  double threshold = 0.0;
  std::string detail;
};

/// log_det, inverse quadratic form and Cholesky of diag(w) + a a^T against the
/// dense routines: relative error, denominators floored at 1 for log_det.
CheckResult check_dense_agreement(int instances, int max_dim, double tolerance, std::uint64_t seed);

/// a = 0 makes the copula density 1: |log c| at random q, d in 1..max_dim.
CheckResult check_independence(int points, int max_dim, double tolerance, std::uint64_t seed);

/// |integral - 1| over random 2-D instances. `m_sign` != 1 corrupts the density
/// (mutation hook); a refinement failure counts as a failed instance.
CheckResult check_copula_normalization(int instances, double tolerance, std::uint64_t seed, double m_sign = 1.0);

/// Closed-form diagonal and full-covariance KL against Monte-Carlo estimates;
/// `worst` is the largest |closed - mc| / SE. Also checks the 2-D worked value
/// 1/2 (7 - 2 - log 11) to 1e-12.
CheckResult check_kl_monte_carlo(int instances, long samples, double max_standard_errors, std::uint64_t seed);

/// Empirical covariance of q = L eps against the dense covariance, worst
/// entrywise relative error.
CheckResult check_sampling_law(long samples, int dim, double tolerance, std::uint64_t seed);

struct MicroModelSpec {
  int vocab = 20;
  int embed = 8;
  int hidden = 8;
  int latent = 4;
  int batch = 2;
  double lambda = 0.4;
  double anneal_w = 0.7;
  /// Uniform perturbation added to every initialized parameter.
  double jitter = 0.3;
  /// Batch statistics (true) or running statistics (false) in the mu head.
  bool train_mode_bn = false;
  std::uint64_t seed = 7;
};

/// Full central-difference check of the batch objective over every parameter
/// entry of a small model (dropout off, fixed noise).
ad::GradientReport micro_model_gradient_check(const MicroModelSpec& spec, double tolerance);
/// Runs the micro-model check with both batch-norm modes.
CheckResult check_gradients(MicroModelSpec spec, double tolerance);

struct VerifyOptions {
  /// Multiplies every tolerance; below 1 is stricter.
  double tolerance_scale = 1.0;
  std::uint64_t seed = 1;
  /// Debug hook forwarded to the normalization check.
  double m_sign = 1.0;
};

std::vector<CheckResult> run_verification(const VerifyOptions& options);

}  // namespace cvlm

#endif  // CVLM_VERIFY_HPP
