#include <cvlm/verify.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include <cvlm/batch_objective.hpp>
#include <cvlm/copula.hpp>
#include <cvlm/errors.hpp>
#include <cvlm/lowrank_cov.hpp>
#include <cvlm/model.hpp>
#include <cvlm/objective.hpp>
#include <cvlm/oracles.hpp>
#include <cvlm/rng.hpp>

namespace cvlm {
namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

CheckResult finish(std::string name, double worst, double threshold, std::string detail) {
  CheckResult r;
  r.name = std::move(name);
  r.worst = worst;
  r.threshold = threshold;
  r.passed = std::isfinite(worst) && worst <= threshold;
  r.detail = std::move(detail);
  return r;
}

double rel(double got, double want, double floor) { return std::abs(got - want) / std::max(std::abs(want), floor); }

}  // namespace

CheckResult check_dense_agreement(int instances, int max_dim, double tolerance, std::uint64_t seed) {
  double worst_logdet = 0.0, worst_quad = 0.0, worst_chol = 0.0;
  for (int k = 0; k < instances; ++k) {
    RngStream rng(seed, "dense_agreement", static_cast<std::uint64_t>(k));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(static_cast<std::uint64_t>(max_dim)));
    const Eigen::VectorXd w = rng.uniform_matrix(d, 1, 0.1, 3.0);
    const Eigen::VectorXd a = rng.normal_matrix(d, 1);
    const Eigen::VectorXd q = rng.normal_matrix(d, 1);
    const DiagRankOneCov<double> cov(w, a);
    const oracle::DenseReference ref = oracle::dense_reference(w, a);

    worst_logdet = std::max(worst_logdet, rel(log_det(cov), ref.logdet, 1.0));
    worst_quad = std::max(worst_quad, rel(inv_quadratic_form(cov, q), q.dot(ref.inverse * q), 1e-300));
    const Eigen::MatrixXd lower = cholesky(cov).matrix();
    worst_chol = std::max(worst_chol, (lower - ref.cholesky).norm() / ref.cholesky.norm());
  }
  const double worst = std::max({worst_logdet, worst_quad, worst_chol});
  return finish("dense agreement", worst, tolerance,
                std::to_string(instances) + " instances, d <= " + std::to_string(max_dim) + "; logdet " +
                    num(worst_logdet) + ", quadratic form " + num(worst_quad) + ", cholesky " + num(worst_chol));
}

CheckResult check_independence(int points, int max_dim, double tolerance, std::uint64_t seed) {
  double worst = 0.0;
  for (int k = 0; k < points; ++k) {
    RngStream rng(seed, "independence", static_cast<std::uint64_t>(k));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(static_cast<std::uint64_t>(max_dim)));
    const DiagRankOneCov<double> cov(rng.uniform_matrix(d, 1, 0.05, 5.0), Eigen::VectorXd::Zero(d));
    const Eigen::VectorXd q = 3.0 * rng.normal_matrix(d, 1);
    worst = std::max(worst, std::abs(log_copula_density(cov, q)));
  }
  return finish("independence (a = 0)", worst, tolerance,
                std::to_string(points) + " points, d in 1.." + std::to_string(max_dim) + "; max |log c| " +
                    num(worst));
}

CheckResult check_copula_normalization(int instances, double tolerance, std::uint64_t seed, double m_sign) {
  double worst = 0.0;
  int failures = 0;
  for (int k = 0; k < instances; ++k) {
    RngStream rng(seed, "normalization", static_cast<std::uint64_t>(k));
    const DiagRankOneCov<double> cov(rng.uniform_matrix(2, 1, 0.2, 2.0), rng.uniform_matrix(2, 1, -1.5, 1.5));
    const Eigen::Vector2d sigma = diag_of(cov).cwiseSqrt();
    auto density = [&](const Eigen::Vector2d& q) { return detail::log_copula_density_with_sign(cov, q, m_sign); };
    try {
      const oracle::QuadratureResult r = oracle::copula_normalization_2d(density, sigma);
      worst = std::max(worst, std::abs(r.value - 1.0) + r.error);
    } catch (const OracleError& e) {
      ++failures;
      worst = std::max(worst, std::isfinite(e.estimate()) ? std::abs(e.estimate() - 1.0) : HUGE_VAL);
    }
  }
  CheckResult r = finish("copula normalization (2-D quadrature)", worst, tolerance,
                         std::to_string(instances) + " instances; max |integral - 1| + error bound " + num(worst) +
                             (failures ? ", " + std::to_string(failures) + " did not converge" : ""));
  if (failures > 0) r.passed = false;
  return r;
}

CheckResult check_kl_monte_carlo(int instances, long samples, double max_standard_errors, std::uint64_t seed) {
  double worst = 0.0;
  for (int k = 0; k < instances; ++k) {
    RngStream rng(seed, "kl_mc", static_cast<std::uint64_t>(k));
    const auto d = static_cast<Eigen::Index>(1 + rng.below(6));
    const Eigen::VectorXd mu = rng.normal_matrix(d, 1);
    const Eigen::VectorXd logvar = rng.uniform_matrix(d, 1, -1.0, 1.0);
    const auto mc = oracle::mc_kl_estimate(mu, logvar, samples, rng.next_u64());
    worst = std::max(worst, std::abs(kl_diag_gaussian_std_normal(mu, logvar) - mc.mean) / mc.standard_error);

    const Eigen::VectorXd w = rng.uniform_matrix(d, 1, 0.2, 1.5);
    const Eigen::VectorXd a = rng.uniform_matrix(d, 1, -0.8, 0.8);
    const auto mc_full = oracle::mc_kl_estimate_fullcov(mu, oracle::dense_covariance(w, a), samples, rng.next_u64());
    const double closed = kl_fullcov_gaussian_std_normal(mu, DiagRankOneCov<double>(w, a));
    worst = std::max(worst, std::abs(closed - mc_full.mean) / mc_full.standard_error);
  }
  // Sigma = [[3, 1], [1, 4]], mu = 0.
  const double worked =
      kl_fullcov_gaussian_std_normal(Eigen::Vector2d::Zero(), DiagRankOneCov<double>(Eigen::Vector2d(2, 3), Eigen::Vector2d(1, 1)));
  const double worked_err = std::abs(worked - 0.5 * (7.0 - 2.0 - std::log(11.0)));
  CheckResult r = finish("KL closed form vs Monte Carlo", worst, max_standard_errors,
                         std::to_string(instances) + " instances x 2 forms, " + std::to_string(samples) +
                             " samples; max deviation " + num(worst) + " SE; worked 2-D value " + num(worked) +
                             " (error " + num(worked_err) + ")");
  if (worked_err > 1e-12) r.passed = false;
  return r;
}

CheckResult check_sampling_law(long samples, int dim, double tolerance, std::uint64_t seed) {
  RngStream rng(seed, "sampling_law");
  const Eigen::VectorXd w = rng.uniform_matrix(dim, 1, 0.2, 1.0);
  Eigen::VectorXd a = rng.uniform_matrix(dim, 1, 0.8, 1.5);
  for (Eigen::Index i = 1; i < dim; i += 2) a[i] = -a[i];
  const DiagRankOneCov<double> cov(w, a);
  const CholeskyFactor<double> chol = cholesky(cov);

  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(dim, dim);
  RngStream noise(seed, "sampling_law_eps");
  for (long s = 0; s < samples; ++s) {
    const CopulaSample draw = reparam_copula_sample(chol, noise.normal_matrix(dim, 1));
    acc.noalias() += draw.q * draw.q.transpose();
  }
  const Eigen::MatrixXd empirical = acc / static_cast<double>(samples);
  const Eigen::MatrixXd target = oracle::dense_covariance(w, a);
  const double worst = ((empirical - target).array().abs() / target.array().abs()).maxCoeff();
  return finish("sampling law q = L eps", worst, tolerance,
                std::to_string(samples) + " draws, d = " + std::to_string(dim) + "; max entrywise relative error " +
                    num(worst));
}

ad::GradientReport micro_model_gradient_check(const MicroModelSpec& spec, double tolerance) {
  ModelConfig cfg;
  cfg.vocab_size = spec.vocab;
  cfg.embed_dim = spec.embed;
  cfg.hidden_dim = spec.hidden;
  cfg.latent_dim = spec.latent;
  cfg.dropout = 0.0;
  ModelParams params(cfg, spec.seed);
  // Move away from the initialization, where the covariance heads are nearly
  // inert (a ~ 0) and their gradients drown in finite-difference roundoff.
  std::uint64_t slot = 0;
  for (ad::Parameter* p : params.parameters()) {
    p->value += RngStream(spec.seed, "micro_model_jitter", slot++).uniform_matrix(p->value.rows(), p->value.cols(),
                                                                                 -spec.jitter, spec.jitter);
  }

  RngStream rng(spec.seed, "micro_model_data");
  std::vector<TokenIds> corpus;
  for (int b = 0; b < spec.batch; ++b) {
    TokenIds ids{kBosId};
    const auto len = 2 + rng.below(5);
    for (std::uint64_t t = 0; t < len; ++t) {
      ids.push_back(kNumReserved + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.vocab - kNumReserved))));
    }
    ids.push_back(kEosId);
    corpus.push_back(std::move(ids));
  }
  const Batch batch = make_batches(corpus, corpus.size(), std::nullopt).front();
  BatchNoise noise;
  noise.eps_z = rng.normal_matrix(spec.latent, spec.batch);
  noise.eps_q = rng.normal_matrix(spec.latent, spec.batch);
  ObjectiveOptions options;
  options.mode = ObjectiveMode::kCopula;
  options.lambda = spec.lambda;
  options.anneal_w = spec.anneal_w;

  const Mode mode = spec.train_mode_bn ? Mode::kTrain : Mode::kEval;
  ad::Tape tape;
  auto loss = [&](bool with_grad) {
    tape.clear();
    const BatchObjective out = batch_objective(tape, params, batch, noise, options, mode, nullptr);
    if (with_grad) tape.backward(out.objective);
    return out.objective.scalar();
  };
  ad::FiniteDiffOptions fd;
  fd.tolerance = tolerance;
  fd.step = 1e-5;
  const auto list = params.parameters();
  return ad::finite_diff_check(loss, list, fd);
}

CheckResult check_gradients(MicroModelSpec spec, double tolerance) {
  double worst = 0.0;
  std::string detail;
  for (bool train_bn : {false, true}) {
    spec.train_mode_bn = train_bn;
    const ad::GradientReport report = micro_model_gradient_check(spec, tolerance);
    const auto top = std::max_element(report.tensors.begin(), report.tensors.end(),
                                      [](const auto& x, const auto& y) { return x.relative_error < y.relative_error; });
    worst = std::max(worst, report.max_relative_error);
    if (!detail.empty()) detail += "; ";
    detail += std::string(train_bn ? "batch-stat BN: " : "running-stat BN: ") + std::to_string(report.tensors.size()) +
              " tensors, worst " + top->name + " " + num(top->relative_error);
  }
  return finish("finite-difference gradient (micro model)", worst, tolerance, detail);
}

std::vector<CheckResult> run_verification(const VerifyOptions& o) {
  const double s = o.tolerance_scale;
  if (!(s > 0.0)) throw ConfigError("verify: tolerance scale must be positive");
  std::vector<CheckResult> out;
  out.push_back(check_dense_agreement(100, 64, 1e-9 * s, o.seed));
  out.push_back(check_independence(100, 32, 1e-12 * s, o.seed));
  out.push_back(check_copula_normalization(20, 1e-3 * s, o.seed, o.m_sign));
  out.push_back(check_kl_monte_carlo(10, 1000000, 3.0 * s, o.seed));
  out.push_back(check_sampling_law(100000, 4, 0.05 * s, o.seed));
  out.push_back(check_gradients(MicroModelSpec{}, 1e-4 * s));
  return out;
}

}  // namespace cvlm
