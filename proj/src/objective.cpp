#include <cvlm/objective.hpp>

#include <algorithm>
#include <cmath>
#include <string>

#include <cvlm/errors.hpp>

namespace cvlm {

double anneal_weight(std::int64_t step, const AnnealSchedule& schedule) {
  if (step < 0) throw DomainError("anneal_weight: step must be non-negative");
  if (schedule.warmup_steps <= 0) return 1.0;
  const double start = std::clamp(schedule.start_weight, 0.0, 1.0);
  if (step >= schedule.warmup_steps) return 1.0;
  const double frac = static_cast<double>(step) / static_cast<double>(schedule.warmup_steps);
  return std::clamp(start + (1.0 - start) * frac, 0.0, 1.0);
}

LossBreakdown compose_loss(double rec_nll, double kl, double log_copula, double sum_log_marginals, double lambda,
                           double anneal_w) {
  auto require_finite = [](double v, const char* name) {
    if (!std::isfinite(v)) throw NumericError(std::string("compose_loss: non-finite ") + name);
  };
  require_finite(rec_nll, "rec_nll");
  require_finite(kl, "kl");
  require_finite(log_copula, "log_copula");
  require_finite(sum_log_marginals, "sum_log_marginals");
  if (kl < 0.0) throw DomainError("compose_loss: kl must be non-negative");
  if (lambda < 0.0) throw DomainError("compose_loss: lambda must be non-negative");
  if (anneal_w < 0.0 || anneal_w > 1.0) throw DomainError("compose_loss: anneal weight outside [0, 1]");

  LossBreakdown out;
  out.rec_nll = rec_nll;
  out.kl = kl;
  out.log_copula = log_copula;
  out.sum_log_marginals = sum_log_marginals;
  out.elbo_nll = rec_nll + anneal_w * kl;
  out.modified_objective = out.elbo_nll - lambda * (log_copula + sum_log_marginals);
  return out;
}

}  // namespace cvlm
