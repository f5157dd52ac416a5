#include <cvlm/evaluation.hpp>

#include <cmath>
#include <set>

#include <cvlm/errors.hpp>

namespace cvlm {

double perplexity(double rec_nll_total, double kl_total, std::int64_t tokens) {
  if (tokens <= 0) throw InputError("perplexity: no tokens");
  return std::exp((rec_nll_total + kl_total) / static_cast<double>(tokens));
}

EvalReport evaluate(ModelParams& params, std::span<const TokenIds> corpus, const EvalOptions& options) {
  if (corpus.empty()) throw InputError("evaluate: empty corpus");
  ObjectiveOptions objective = options.objective;
  objective.anneal_w = 1.0;
  const Eigen::Index d = params.config.latent_dim;

  EvalReport report;
  double log_copula = 0.0, sum_log_marg = 0.0, modified = 0.0;
  if (options.keep_trace) {
    report.trace.w.resize(d, static_cast<Eigen::Index>(corpus.size()));
    report.trace.a.resize(d, static_cast<Eigen::Index>(corpus.size()));
    report.trace.q.resize(d, static_cast<Eigen::Index>(corpus.size()));
    report.trace.log_copula.resize(static_cast<Eigen::Index>(corpus.size()));
  }

  ad::Tape tape;
  for (const Batch& batch : make_batches(corpus, options.batch_size, std::nullopt)) {
    tape.clear();
    const BatchNoise noise = evaluation_noise(options.seed, batch, d, false);
    const BatchObjective out = batch_objective(tape, params, batch, noise, objective, Mode::kEval, nullptr);
    report.rec_nll_total += out.totals.rec_nll;
    report.kl_total += out.totals.kl;
    log_copula += out.totals.log_copula;
    sum_log_marg += out.totals.sum_log_marginals;
    modified += out.totals.modified_objective;
    report.tokens_evaluated += out.tokens;
    report.sentences_evaluated += batch.size();
    report.lambda = out.lambda_effective;
    if (options.keep_trace) {
      for (Eigen::Index j = 0; j < batch.size(); ++j) {
        const auto col = static_cast<Eigen::Index>(batch.indices[static_cast<std::size_t>(j)]);
        report.trace.w.col(col) = out.posterior.w.value().col(j);
        report.trace.a.col(col) = out.posterior.a.value().col(j);
        report.trace.q.col(col) = out.q.value().col(j);
      }
    }
  }
  if (options.keep_trace) {
    // Per-example copula density from the same tape primitives, one column at a time.
    for (Eigen::Index j = 0; j < report.trace.q.cols(); ++j) {
      tape.clear();
      const ad::Var w = tape.constant(report.trace.w.col(j));
      const ad::Var a = tape.constant(report.trace.a.col(j));
      const ad::Var q = tape.constant(report.trace.q.col(j));
      const ad::Var var = w + square(a);
      const ad::Var lc = 0.5 * (sum(log(var)) - sum(lowrank_log_det(w, a)) + sum(square(q) / var) -
                                sum(lowrank_inv_quadratic_form(w, a, q)));
      report.trace.log_copula[j] = lc.scalar();
    }
  }

  const auto n = static_cast<double>(report.sentences_evaluated);
  report.rec_nll = report.rec_nll_total / n;
  report.kl = report.kl_total / n;
  report.nll = report.rec_nll + report.kl;
  report.log_copula = log_copula / n;
  report.sum_log_marginals = sum_log_marg / n;
  report.modified_objective = modified / n;
  report.ppl = perplexity(report.rec_nll_total, report.kl_total, report.tokens_evaluated);
  return report;
}

Eigen::MatrixXd posterior_means(ModelParams& params, std::span<const TokenIds> corpus, std::size_t batch_size) {
  Eigen::MatrixXd means(params.config.latent_dim, static_cast<Eigen::Index>(corpus.size()));
  ad::Tape tape;
  for (const Batch& batch : make_batches(corpus, batch_size, std::nullopt)) {
    tape.clear();
    BoundModel m = BoundModel::bind(tape, params);
    const ad::Var h = encode(m, batch, Mode::kEval, nullptr);
    const PosteriorVars post = infer_posterior(m, h, Mode::kEval);
    for (Eigen::Index j = 0; j < batch.size(); ++j) {
      means.col(static_cast<Eigen::Index>(batch.indices[static_cast<std::size_t>(j)])) = post.mu.value().col(j);
    }
  }
  return means;
}

int count_active_units(const Eigen::MatrixXd& means, double threshold) {
  if (means.cols() == 0) return 0;
  const Eigen::VectorXd mean = means.rowwise().mean();
  const Eigen::VectorXd var = (means.colwise() - mean).array().square().rowwise().mean();
  return static_cast<int>((var.array() > threshold).count());
}

int active_units(ModelParams& params, std::span<const TokenIds> corpus, double threshold) {
  if (corpus.empty()) throw InputError("active_units: empty corpus");
  return count_active_units(posterior_means(params, corpus), threshold);
}

std::vector<TokenIds> sample_from_prior(ModelParams& params, std::size_t n, std::uint64_t seed, std::size_t max_len) {
  std::vector<TokenIds> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng(seed, "prior_sample", i);
    const Eigen::VectorXd z = rng.normal_matrix(params.config.latent_dim, 1);
    out.push_back(greedy_decode(params, z, max_len));
  }
  return out;
}

double distinct_ratio(std::span<const std::string> sentences) {
  if (sentences.empty()) return 0.0;
  const std::set<std::string> unique(sentences.begin(), sentences.end());
  return static_cast<double>(unique.size()) / static_cast<double>(sentences.size());
}

}  // namespace cvlm
