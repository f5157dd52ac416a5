#ifndef CVLM_EVALUATION_HPP
#define CVLM_EVALUATION_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include <cvlm/batch_objective.hpp>
#include <cvlm/data.hpp>
#include <cvlm/model.hpp>

namespace cvlm {

struct EvalOptions {
  ObjectiveOptions objective;  // anneal_w is forced to 1
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  /// Keep per-example (w, a, q, log c) for inspection.
  bool keep_trace = false;
};

/// Per-example copula quantities recorded during evaluation.
struct CopulaTrace {
  Eigen::MatrixXd w;
  Eigen::MatrixXd a;
  Eigen::MatrixXd q;
  Eigen::VectorXd log_copula;
};

struct EvalReport {
  // Per-sentence averages (nats).
  double nll = 0.0;  // rec_nll + kl
  double rec_nll = 0.0;
  double kl = 0.0;
  double log_copula = 0.0;
  double sum_log_marginals = 0.0;
  double modified_objective = 0.0;
  double ppl = 0.0;
  // Raw totals.
  double rec_nll_total = 0.0;
  double kl_total = 0.0;
  std::int64_t sentences_evaluated = 0;
  std::int64_t tokens_evaluated = 0;
  double lambda = 0.0;
  int active_units = 0;
  double distinct_ratio = 0.0;
  CopulaTrace trace;
};

/// Single-sample ELBO bound over `corpus` in eval mode with anneal weight 1.
/// Active units and distinct ratio are left at zero; see the functions below.
EvalReport evaluate(ModelParams& params, std::span<const TokenIds> corpus, const EvalOptions& options);

/// exp(total nats / tokens).
double perplexity(double rec_nll_total, double kl_total, std::int64_t tokens);

/// Eval-mode posterior means, latent_dim x N.
Eigen::MatrixXd posterior_means(ModelParams& params, std::span<const TokenIds> corpus, std::size_t batch_size = 64);

/// Number of rows of `means` (one latent dimension each) whose variance across
/// columns exceeds `threshold`.
int count_active_units(const Eigen::MatrixXd& means, double threshold = 0.01);
int active_units(ModelParams& params, std::span<const TokenIds> corpus, double threshold = 0.01);

/// Greedy decodes of z ~ N(0, I), one token list per sample.
std::vector<TokenIds> sample_from_prior(ModelParams& params, std::size_t n, std::uint64_t seed, std::size_t max_len);

/// Unique sentences / total; 0 for an empty list.
double distinct_ratio(std::span<const std::string> sentences);

}  // namespace cvlm

#endif  // CVLM_EVALUATION_HPP
