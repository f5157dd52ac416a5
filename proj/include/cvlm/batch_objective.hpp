#ifndef CVLM_BATCH_OBJECTIVE_HPP
#define CVLM_BATCH_OBJECTIVE_HPP

// One minibatch of the copula-regularized objective on a tape.

#include <cstdint>
#include <string>
#include <string_view>

#include <cvlm/autodiff.hpp>
#include <cvlm/data.hpp>
#include <cvlm/model.hpp>
#include <cvlm/objective.hpp>

namespace cvlm {

/// mean_field: diagonal Gaussian posterior, lambda forced to 0.
/// copula:     diagonal posterior plus lambda (log c_Sigma + sum log q(z_i|x)).
/// fullcov:    z ~ N(mu, diag(w) + a a^T) with its closed-form KL, no copula term.
enum class ObjectiveMode { kMeanField, kCopula, kFullCov };

std::string_view to_string(ObjectiveMode mode);
ObjectiveMode objective_mode_from_string(std::string_view name);

struct ObjectiveOptions {
  ObjectiveMode mode = ObjectiveMode::kCopula;
  double lambda = 0.0;
  double anneal_w = 1.0;
  /// Scale the copula weight by the KL anneal weight as well.
  bool anneal_copula = false;
};

/// Standard-normal draws for one batch: eps_z drives z, eps_q drives q = L eps.
struct BatchNoise {
  ad::Matrix eps_z;
  ad::Matrix eps_q;
};

/// Noise for training batch `batch_index` of `epoch`, one column per example.
BatchNoise training_noise(std::uint64_t seed, std::int64_t epoch, std::int64_t batch_index, Eigen::Index latent,
                          Eigen::Index batch_size, bool shared);
/// Noise keyed by each example's corpus index, independent of batching.
BatchNoise evaluation_noise(std::uint64_t seed, const Batch& batch, Eigen::Index latent, bool shared);

struct BatchObjective {
  /// Minimized quantity averaged over the batch, 1 x 1.
  ad::Var objective;
  /// Sums over the batch.
  LossBreakdown totals;
  double lambda_effective = 0.0;
  std::int64_t tokens = 0;
  PosteriorVars posterior;
  ad::Var z;
  ad::Var q;
};

BatchObjective batch_objective(ad::Tape& tape, ModelParams& params, const Batch& batch, const BatchNoise& noise,
                               const ObjectiveOptions& options, Mode mode, RngStream* dropout_rng);

/// Weight actually applied to the copula term.
double effective_lambda(const ObjectiveOptions& options);

}  // namespace cvlm

#endif  // CVLM_BATCH_OBJECTIVE_HPP
