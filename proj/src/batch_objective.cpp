#include <cvlm/batch_objective.hpp>

#include <algorithm>

#include <cvlm/errors.hpp>
#include <cvlm/special_functions.hpp>

namespace cvlm {

using ad::Matrix;
using ad::Var;

std::string_view to_string(ObjectiveMode mode) {
  switch (mode) {
    case ObjectiveMode::kMeanField:
      return "mean_field";
    case ObjectiveMode::kCopula:
      return "copula";
    case ObjectiveMode::kFullCov:
      return "fullcov";
  }
  return "copula";
}

ObjectiveMode objective_mode_from_string(std::string_view name) {
  if (name == "mean_field") return ObjectiveMode::kMeanField;
  if (name == "copula") return ObjectiveMode::kCopula;
  if (name == "fullcov") return ObjectiveMode::kFullCov;
  throw ConfigError("unknown objective mode '" + std::string(name) + "' (mean_field, copula, fullcov)");
}

double effective_lambda(const ObjectiveOptions& options) {
  if (options.mode != ObjectiveMode::kCopula) return 0.0;
  return options.anneal_copula ? options.lambda * options.anneal_w : options.lambda;
}

BatchNoise training_noise(std::uint64_t seed, std::int64_t epoch, std::int64_t batch_index, Eigen::Index latent,
                          Eigen::Index batch_size, bool shared) {
  const auto e = static_cast<std::uint64_t>(epoch);
  const auto b = static_cast<std::uint64_t>(batch_index);
  BatchNoise noise;
  noise.eps_z = RngStream(seed, "eps_z", e, b).normal_matrix(latent, batch_size);
  noise.eps_q = shared ? noise.eps_z : RngStream(seed, "eps_q", e, b).normal_matrix(latent, batch_size);
  return noise;
}

BatchNoise evaluation_noise(std::uint64_t seed, const Batch& batch, Eigen::Index latent, bool shared) {
  const Eigen::Index n = batch.size();
  BatchNoise noise{Matrix(latent, n), Matrix(latent, n)};
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto example = static_cast<std::uint64_t>(batch.indices[static_cast<std::size_t>(j)]);
    noise.eps_z.col(j) = RngStream(seed, "eval_eps_z", example).normal_matrix(latent, 1);
    if (shared) {
      noise.eps_q.col(j) = noise.eps_z.col(j);
    } else {
      noise.eps_q.col(j) = RngStream(seed, "eval_eps_q", example).normal_matrix(latent, 1);
    }
  }
  return noise;
}

BatchObjective batch_objective(ad::Tape& tape, ModelParams& params, const Batch& batch, const BatchNoise& noise,
                               const ObjectiveOptions& options, Mode mode, RngStream* dropout_rng) {
  const Eigen::Index n = batch.size();
  const Eigen::Index d = params.config.latent_dim;
  if (n < 1) throw InputError("batch_objective: empty batch");
  if (noise.eps_z.rows() != d || noise.eps_z.cols() != n || noise.eps_q.rows() != d || noise.eps_q.cols() != n) {
    throw ShapeError("batch_objective: noise must be latent_dim x batch");
  }

  BoundModel m = BoundModel::bind(tape, params);
  BatchObjective out;
  const Var h = encode(m, batch, mode, dropout_rng);
  out.posterior = infer_posterior(m, h, mode);
  const PosteriorVars& post = out.posterior;

  const Var eps_z = tape.constant(noise.eps_z, "eps_z");
  const Var eps_q = tape.constant(noise.eps_q, "eps_q");
  const Var factor = rank_one_cholesky(post.w, post.a);
  out.q = rank_one_lower_matvec(factor, post.a, eps_q);

  Var kl;
  if (options.mode == ObjectiveMode::kFullCov) {
    out.z = post.mu + rank_one_lower_matvec(factor, post.a, eps_z);
    const Var trace = sum(post.w + square(post.a));
    kl = 0.5 * (add_scalar(trace + sum(square(post.mu)), -static_cast<double>(d * n)) -
                sum(lowrank_log_det(post.w, post.a)));
  } else {
    out.z = reparam_z(post.mu, post.logvar, eps_z);
    kl = -0.5 * sum(add_scalar(post.logvar, 1.0) - square(post.mu) - exp(post.logvar));
  }

  // log c_Sigma(q) summed over the batch.
  const Var marginal_var = post.w + square(post.a);
  const Var log_copula =
      0.5 * (sum(log(marginal_var)) - sum(lowrank_log_det(post.w, post.a)) +
             sum(square(out.q) / marginal_var) - sum(lowrank_inv_quadratic_form(post.w, post.a, out.q)));
  // sum_i log N(z_i; mu_i, sigma_i^2) summed over the batch.
  const Var sum_log_marg =
      add_scalar(-0.5 * (sum(post.logvar) + sum(square(out.z - post.mu) / exp(post.logvar))),
                 -0.5 * static_cast<double>(d * n) * kLog2Pi);

  const Var rec = decode_nll(m, out.z, batch, mode, dropout_rng);

  out.lambda_effective = effective_lambda(options);
  const Var total = rec + options.anneal_w * kl - out.lambda_effective * (log_copula + sum_log_marg);
  out.objective = (1.0 / static_cast<double>(n)) * total;
  out.totals = compose_loss(rec.scalar(), std::max(0.0, kl.scalar()), log_copula.scalar(), sum_log_marg.scalar(),
                            out.lambda_effective, options.anneal_w);
  out.tokens = target_token_count(batch);
  return out;
}

}  // namespace cvlm
