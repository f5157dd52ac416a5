#ifndef CVLM_TRAINER_HPP
#define CVLM_TRAINER_HPP

// Adam training of the copula-regularized objective, metric logging and the
// binary checkpoint format.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <cvlm/autodiff.hpp>
#include <cvlm/config.hpp>
#include <cvlm/data.hpp>
#include <cvlm/evaluation.hpp>
#include <cvlm/gradcheck.hpp>
#include <cvlm/model.hpp>

namespace cvlm {

struct AdamState {
  std::vector<Eigen::MatrixXd> m;
  std::vector<Eigen::MatrixXd> v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  /// Zero moments shaped like `params`.
  static AdamState zeros_like(std::span<const ad::Parameter* const> params);
};

/// Bias-corrected Adam update from each Parameter::grad. A non-finite gradient
/// throws NumericError naming the parameter before anything is modified.
void adam_step(std::span<ad::Parameter* const> params, AdamState& state, double lr);

double global_grad_norm(std::span<const ad::Parameter* const> params);
/// Rescales all gradients so their global norm is at most `max_norm` (0 = off).
/// Returns the norm before clipping.
double clip_grad_norm(std::span<ad::Parameter* const> params, double max_norm);

struct TrainingProgress {
  std::int64_t epochs_completed = 0;
  std::int64_t global_step = 0;
  double best_valid_objective = std::numeric_limits<double>::infinity();
  std::int64_t best_epoch = -1;
};

struct Checkpoint {
  TrainingConfig config;
  Vocabulary vocab;
  ModelParams params;
  AdamState adam;
  TrainingProgress progress;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (all integers and floats little-endian):
///   "CVLM", u32 version,
///   u64 length + config text, u64 length + vocabulary text,
///   u32 tensor count, then per parameter in declaration order:
///     u32 name length + name, u64 rows, u64 cols, rows*cols f64 (column-major),
///   Adam: i64 step, f64 beta1, beta2, eps, then m and v tensors (f64 only),
///   batch-norm running mean and variance (u64 length + f64s),
///   progress: i64 epochs_completed, i64 global_step, f64 best objective, i64 best epoch,
///   u32 CRC-32 of every preceding byte.
std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic, version, truncation, trailing bytes or
/// checksum mismatch.
Checkpoint deserialize_checkpoint(std::span<const unsigned char> bytes);

/// Writes through a temporary file and a rename, so an existing checkpoint is
/// never left half-written.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct MetricsRow {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  std::string split;
  double rec_nll = 0.0;
  double kl = 0.0;
  double log_copula = 0.0;
  double sum_log_marg = 0.0;
  double elbo_nll = 0.0;
  double ppl = 0.0;
  double anneal_w = 0.0;
  double lambda = 0.0;
  double grad_norm = 0.0;
  double wallclock_s = 0.0;
};

std::string metrics_header();
std::string format_metrics_row(const MetricsRow& row);
/// Metrics header plus `active_units,distinct_ratio`.
std::string eval_header();
std::string format_eval_row(const MetricsRow& row, int active_units, double distinct_ratio);
/// Builds a row from an evaluation report.
MetricsRow metrics_row(const EvalReport& report, std::int64_t epoch, std::int64_t step, const std::string& split,
                       double anneal_w);

struct TrainOptions {
  /// Receives metrics.csv, vocab.txt, last.ckpt, best.ckpt and timing.csv when set.
  std::optional<std::filesystem::path> out_dir;
  /// Continue from a checkpoint written at an epoch boundary.
  std::optional<std::filesystem::path> resume_from;
  /// Progress messages; nullptr for silence.
  std::ostream* log = nullptr;
};

struct TrainResult {
  Checkpoint final_state;
  EvalReport final_valid;
  std::vector<MetricsRow> metrics;
  double wallclock_s = 0.0;
};

/// Default warmup when `anneal_warmup_steps` is negative: ten epochs of steps.
std::int64_t resolved_warmup_steps(const TrainingConfig& config, std::size_t train_size);

/// Finite-difference gate on a small slice of the training corpus (eval mode,
/// anneal weight 1, up to 8 probes per tensor, 1e-3 relative tolerance).
ad::GradientReport gradient_gate(ModelParams& params, std::span<const TokenIds> corpus, const TrainingConfig& config);

/// Trains on `train_lines`, validating on `valid_lines` after every epoch.
/// Throws VerificationError if the gradient gate fails, NumericError on a
/// non-finite loss or gradient (the last epoch's checkpoint stays on disk).
TrainResult train(const TrainingConfig& config, std::span<const std::string> train_lines,
                  std::span<const std::string> valid_lines, const TrainOptions& options = {});

}  // namespace cvlm

#endif  // CVLM_TRAINER_HPP
