#include <cvlm/trainer.hpp>

#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <ostream>
#include <sstream>

#include <zlib.h>

#include <cvlm/errors.hpp>
#include <cvlm/gradcheck.hpp>

namespace cvlm {

// ---------------------------------------------------------------------------
// Optimizer

AdamState AdamState::zeros_like(std::span<const ad::Parameter* const> params) {
  AdamState s;
  for (const ad::Parameter* p : params) {
    s.m.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    s.v.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
  }
  return s;
}

void adam_step(std::span<ad::Parameter* const> params, AdamState& state, double lr) {
  if (!(lr > 0.0)) throw ConfigError("adam_step: learning rate must be positive");
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ad::Parameter& p = *params[i];
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols() || state.m[i].rows() != p.value.rows() ||
        state.m[i].cols() != p.value.cols()) {
      throw ShapeError("adam_step: shape mismatch for " + p.name);
    }
    if (!p.grad.allFinite()) throw NumericError("adam_step: non-finite gradient in " + p.name);
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Parameter& p = *params[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * p.grad;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * p.grad.cwiseProduct(p.grad);
    p.value.array() -= lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + state.eps);
  }
}

double global_grad_norm(std::span<const ad::Parameter* const> params) {
  double sq = 0.0;
  for (const ad::Parameter* p : params) sq += p->grad.squaredNorm();
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<ad::Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const ad::Parameter* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
    const double scale = max_norm / norm;
    for (ad::Parameter* p : params) p->grad *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Checkpoint format

namespace {

constexpr char kMagic[4] = {'C', 'V', 'L', 'M'};

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void text(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void matrix(const Eigen::MatrixXd& m) {
    for (Eigen::Index k = 0; k < m.size(); ++k) f64(m.data()[k]);
  }
  void vector(const Eigen::VectorXd& v) {
    u64(static_cast<std::uint64_t>(v.size()));
    matrix(v);
  }
  std::vector<unsigned char>& buffer() { return out_; }

 private:
  std::vector<unsigned char> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> data) : data_(data) {}

  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string text() { return raw(u64()); }
  std::string raw(std::uint64_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void matrix_into(Eigen::MatrixXd& m) {
    need(static_cast<std::size_t>(m.size()) * 8);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = f64();
  }
  Eigen::VectorXd vector(Eigen::Index expected) {
    const std::uint64_t n = u64();
    if (n != static_cast<std::uint64_t>(expected)) throw CheckpointError("checkpoint: batch-norm state has wrong size");
    Eigen::MatrixXd v(expected, 1);
    matrix_into(v);
    return v;
  }
  std::size_t position() const { return pos_; }

 private:
  std::span<const unsigned char> data_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.text(to_config_text(ckpt.config));
  w.text(ckpt.vocab.to_text());

  const auto params = ckpt.params.parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const ad::Parameter* p : params) {
    w.u32(static_cast<std::uint32_t>(p->name.size()));
    w.bytes(p->name.data(), p->name.size());
    w.u64(static_cast<std::uint64_t>(p->value.rows()));
    w.u64(static_cast<std::uint64_t>(p->value.cols()));
    w.matrix(p->value);
  }

  if (ckpt.adam.m.size() != params.size() || ckpt.adam.v.size() != params.size()) {
    throw ShapeError("serialize_checkpoint: optimizer state does not match the parameters");
  }
  w.i64(ckpt.adam.step);
  w.f64(ckpt.adam.beta1);
  w.f64(ckpt.adam.beta2);
  w.f64(ckpt.adam.eps);
  for (const auto& m : ckpt.adam.m) w.matrix(m);
  for (const auto& v : ckpt.adam.v) w.matrix(v);

  w.vector(ckpt.params.bn.running_mean);
  w.vector(ckpt.params.bn.running_var);

  w.i64(ckpt.progress.epochs_completed);
  w.i64(ckpt.progress.global_step);
  w.f64(ckpt.progress.best_valid_objective);
  w.i64(ckpt.progress.best_epoch);

  auto& buf = w.buffer();
  w.u32(crc_of(buf.data(), buf.size()));
  return std::move(buf);
}

Checkpoint deserialize_checkpoint(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12) throw CheckpointError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError("not a checkpoint (bad magic)");
  Reader r(bytes.first(bytes.size() - 4));
  (void)r.raw(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  if (Reader(bytes.last(4)).u32() != crc_of(bytes.data(), bytes.size() - 4)) {
    throw CheckpointError("checkpoint checksum mismatch");
  }

  Checkpoint ckpt;
  try {
    ckpt.config = parse_config_text(r.text());
    ckpt.vocab = Vocabulary::from_text(r.text());
    ckpt.params = ModelParams(model_config(ckpt.config, static_cast<int>(ckpt.vocab.size())), ckpt.config.seed);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }

  const auto params = ckpt.params.parameters();
  if (r.u32() != params.size()) throw CheckpointError("checkpoint: unexpected tensor count");
  for (ad::Parameter* p : params) {
    const std::string name = r.raw(r.u32());
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (name != p->name || rows != static_cast<std::uint64_t>(p->value.rows()) ||
        cols != static_cast<std::uint64_t>(p->value.cols())) {
      throw CheckpointError("checkpoint: tensor '" + name + "' does not match the configured model");
    }
    r.matrix_into(p->value);
  }

  ckpt.adam = AdamState::zeros_like(ckpt.params.parameters());
  ckpt.adam.step = r.i64();
  ckpt.adam.beta1 = r.f64();
  ckpt.adam.beta2 = r.f64();
  ckpt.adam.eps = r.f64();
  for (auto& m : ckpt.adam.m) r.matrix_into(m);
  for (auto& v : ckpt.adam.v) r.matrix_into(v);

  const Eigen::Index d = ckpt.params.config.latent_dim;
  ckpt.params.bn.running_mean = r.vector(d);
  ckpt.params.bn.running_var = r.vector(d);

  ckpt.progress.epochs_completed = r.i64();
  ckpt.progress.global_step = r.i64();
  ckpt.progress.best_valid_objective = r.f64();
  ckpt.progress.best_epoch = r.i64();
  if (r.position() != bytes.size() - 4) throw CheckpointError("checkpoint: unexpected trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::vector<unsigned char> bytes = serialize_checkpoint(ckpt);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// ---------------------------------------------------------------------------
// Metrics

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

std::string metrics_header() {
  return "epoch,step,split,rec_nll,kl,log_copula,sum_log_marg,elbo_nll,ppl,anneal_w,lambda,grad_norm,wallclock_s";
}

std::string format_metrics_row(const MetricsRow& r) {
  return std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + r.split + "," + fmt(r.rec_nll) + "," +
         fmt(r.kl) + "," + fmt(r.log_copula) + "," + fmt(r.sum_log_marg) + "," + fmt(r.elbo_nll) + "," + fmt(r.ppl) +
         "," + fmt(r.anneal_w) + "," + fmt(r.lambda) + "," + fmt(r.grad_norm) + "," + fmt(r.wallclock_s);
}

std::string eval_header() { return metrics_header() + ",active_units,distinct_ratio"; }

std::string format_eval_row(const MetricsRow& row, int active_units, double distinct_ratio) {
  return format_metrics_row(row) + "," + std::to_string(active_units) + "," + fmt(distinct_ratio);
}

MetricsRow metrics_row(const EvalReport& report, std::int64_t epoch, std::int64_t step, const std::string& split,
                       double anneal_w) {
  MetricsRow row;
  row.epoch = epoch;
  row.step = step;
  row.split = split;
  row.rec_nll = report.rec_nll;
  row.kl = report.kl;
  row.log_copula = report.log_copula;
  row.sum_log_marg = report.sum_log_marginals;
  row.elbo_nll = report.nll;
  row.ppl = report.ppl;
  row.anneal_w = anneal_w;
  row.lambda = report.lambda;
  return row;
}

// ---------------------------------------------------------------------------
// Training loop

std::int64_t resolved_warmup_steps(const TrainingConfig& config, std::size_t train_size) {
  if (config.anneal_warmup_steps >= 0) return config.anneal_warmup_steps;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  return 10 * static_cast<std::int64_t>((train_size + bs - 1) / bs);
}

ad::GradientReport gradient_gate(ModelParams& params, std::span<const TokenIds> corpus, const TrainingConfig& config) {
  if (corpus.empty()) throw InputError("gradient_gate: empty corpus");
  const std::size_t n = std::min<std::size_t>(corpus.size(), 4);
  const Batch batch = make_batches(corpus.first(n), n, std::nullopt).front();
  const BatchNoise noise =
      training_noise(config.seed, -1, 0, params.config.latent_dim, batch.size(), config.shared_noise);
  const ObjectiveOptions options = objective_options(config, 1.0);
  ad::Tape tape;
  auto loss = [&](bool with_grad) {
    tape.clear();
    const BatchObjective out = batch_objective(tape, params, batch, noise, options, Mode::kEval, nullptr);
    if (with_grad) tape.backward(out.objective);
    return out.objective.scalar();
  };
  ad::FiniteDiffOptions fd;
  fd.tolerance = 1e-3;
  fd.max_entries_per_tensor = 8;
  fd.roundoff_units = 10.0;
  fd.seed = config.seed;
  const auto list = params.parameters();
  return ad::finite_diff_check(loss, list, fd);
}

namespace {

struct IntervalStats {
  double rec = 0.0, kl = 0.0, log_copula = 0.0, slm = 0.0, grad_norm = 0.0;
  std::int64_t sentences = 0, tokens = 0, steps = 0;

  void add(const BatchObjective& out, std::int64_t n, double norm) {
    rec += out.totals.rec_nll;
    kl += out.totals.kl;
    log_copula += out.totals.log_copula;
    slm += out.totals.sum_log_marginals;
    grad_norm += norm;
    sentences += n;
    tokens += out.tokens;
    ++steps;
  }
  MetricsRow row(std::int64_t epoch, std::int64_t step, double anneal_w, double lambda) const {
    const auto s = static_cast<double>(sentences);
    MetricsRow r;
    r.epoch = epoch;
    r.step = step;
    r.split = "train";
    r.rec_nll = rec / s;
    r.kl = kl / s;
    r.log_copula = log_copula / s;
    r.sum_log_marg = slm / s;
    r.elbo_nll = (rec + kl) / s;
    r.ppl = perplexity(rec, kl, tokens);
    r.anneal_w = anneal_w;
    r.lambda = lambda;
    r.grad_norm = grad_norm / static_cast<double>(steps);
    return r;
  }
};

void require_compatible(const Checkpoint& ckpt, const TrainingConfig& config) {
  const TrainingConfig& c = ckpt.config;
  if (c.latent_dim != config.latent_dim || c.hidden_dim != config.hidden_dim || c.embed_dim != config.embed_dim ||
      c.scalar_w != config.scalar_w || c.vocab_max != config.vocab_max || c.max_len != config.max_len ||
      c.seed != config.seed) {
    throw ConfigError("resume: checkpoint model dimensions, vocabulary or seed differ from the configuration");
  }
}

}  // namespace

TrainResult train(const TrainingConfig& config, std::span<const std::string> train_lines,
                  std::span<const std::string> valid_lines, const TrainOptions& options) {
  validate(config);
  if (train_lines.empty()) throw InputError("train: empty training corpus");
  if (valid_lines.empty()) throw InputError("train: empty validation corpus");
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  auto say = [&](const std::string& msg) {
    if (options.log != nullptr) *options.log << msg << std::endl;
  };

  TrainResult result;
  Checkpoint& state = result.final_state;
  const bool resuming = options.resume_from.has_value();
  if (resuming) {
    state = load_checkpoint(*options.resume_from);
    require_compatible(state, config);
  } else {
    state.vocab = Vocabulary::build(train_lines, static_cast<std::size_t>(config.vocab_max));
    state.params = ModelParams(model_config(config, static_cast<int>(state.vocab.size())), config.seed);
    state.adam = AdamState::zeros_like(state.params.parameters());
  }
  state.config = config;
  state.params.config.dropout = config.dropout;
  ModelParams& params = state.params;
  const auto param_list = params.parameters();

  const auto max_len = static_cast<std::size_t>(config.max_len);
  const std::vector<TokenIds> train_ids = encode_corpus(train_lines, state.vocab, max_len);
  const std::vector<TokenIds> valid_ids = encode_corpus(valid_lines, state.vocab, max_len);
  const AnnealSchedule schedule{resolved_warmup_steps(config, train_ids.size()), config.anneal_start};

  if (!resuming && config.grad_check) {
    const ad::GradientReport gate = gradient_gate(params, train_ids, config);
    if (!gate.passed) {
      std::string worst;
      for (const auto& t : gate.tensors) {
        if (!t.passed) worst += " " + t.name + "=" + fmt(t.relative_error);
      }
      throw VerificationError("gradient check failed before training (relative error above 1e-3:" + worst + ")");
    }
    say("gradient check passed (max relative error " + fmt(gate.max_relative_error) + ")");
  }

  std::ofstream metrics_file, timing_file;
  std::filesystem::path out_dir;
  if (options.out_dir) {
    out_dir = *options.out_dir;
    std::filesystem::create_directories(out_dir);
    const auto mode = resuming ? std::ios::app : std::ios::trunc;
    metrics_file.open(out_dir / "metrics.csv", std::ios::out | mode);
    timing_file.open(out_dir / "timing.csv", std::ios::out | mode);
    if (!metrics_file || !timing_file) throw IoError("cannot write metrics under " + out_dir.string());
    if (!resuming) {
      metrics_file << metrics_header() << '\n';
      timing_file << "epoch,wallclock_s\n";
    }
    state.vocab.save(out_dir / "vocab.txt");
  }
  auto emit = [&](MetricsRow row) {
    row.wallclock_s = config.deterministic ? 0.0 : elapsed();
    if (metrics_file.is_open()) metrics_file << format_metrics_row(row) << '\n' << std::flush;
    result.metrics.push_back(std::move(row));
  };

  EvalOptions eval_options;
  eval_options.objective = objective_options(config, 1.0);
  eval_options.seed = config.seed;
  eval_options.batch_size = static_cast<std::size_t>(config.batch_size);

  ad::Tape tape;
  TrainingProgress& progress = state.progress;
  for (std::int64_t epoch = progress.epochs_completed; epoch < config.epochs; ++epoch) {
    const std::uint64_t shuffle_seed = RngStream(config.seed, "shuffle", static_cast<std::uint64_t>(epoch)).next_u64();
    const std::vector<Batch> batches = make_batches(train_ids, eval_options.batch_size, shuffle_seed);
    IntervalStats interval;
    double anneal = anneal_weight(progress.global_step, schedule);
    double lambda_eff = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const Batch& batch = batches[bi];
      anneal = anneal_weight(progress.global_step, schedule);
      tape.clear();
      const BatchNoise noise = training_noise(config.seed, epoch, static_cast<std::int64_t>(bi),
                                              params.config.latent_dim, batch.size(), config.shared_noise);
      RngStream dropout_rng(config.seed, "dropout", static_cast<std::uint64_t>(epoch), bi);
      const BatchObjective out =
          batch_objective(tape, params, batch, noise, objective_options(config, anneal), Mode::kTrain, &dropout_rng);
      const std::string where = "epoch " + std::to_string(epoch) + " batch " + std::to_string(bi);
      if (!std::isfinite(out.objective.scalar())) throw NumericError("non-finite loss at " + where);
      params.zero_grad();
      tape.backward(out.objective);
      const double norm = clip_grad_norm(param_list, config.grad_clip);
      try {
        adam_step(param_list, state.adam, config.lr);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at " + where);
      }
      ++progress.global_step;
      lambda_eff = out.lambda_effective;
      interval.add(out, batch.size(), norm);
      if (progress.global_step % config.log_interval == 0) {
        emit(interval.row(epoch, progress.global_step, anneal, lambda_eff));
        interval = {};
      }
    }
    if (interval.steps > 0) emit(interval.row(epoch, progress.global_step, anneal, lambda_eff));

    result.final_valid = evaluate(params, valid_ids, eval_options);
    emit(metrics_row(result.final_valid, epoch, progress.global_step, "valid", anneal));
    progress.epochs_completed = epoch + 1;
    say("epoch " + std::to_string(epoch) + " valid rec " + fmt(result.final_valid.rec_nll) + " kl " +
        fmt(result.final_valid.kl) + " ppl " + fmt(result.final_valid.ppl));
    const bool improved = result.final_valid.modified_objective < progress.best_valid_objective;
    if (improved) {
      progress.best_valid_objective = result.final_valid.modified_objective;
      progress.best_epoch = epoch;
    }
    if (options.out_dir) {
      if (improved) save_checkpoint(state, out_dir / "best.ckpt");
      save_checkpoint(state, out_dir / "last.ckpt");
      timing_file << epoch << ',' << fmt(elapsed()) << '\n' << std::flush;
    }
  }
  if (progress.epochs_completed > 0 && result.final_valid.sentences_evaluated == 0) {
    result.final_valid = evaluate(params, valid_ids, eval_options);
  }
  result.wallclock_s = elapsed();
  return result;
}

}  // namespace cvlm
