#include <cvlm/model.hpp>

#include <cmath>
#include <string>

#include <cvlm/errors.hpp>

namespace cvlm {

using ad::Matrix;
using ad::Var;
using Eigen::Index;

namespace {

ad::Parameter uniform_param(const char* name, Index rows, Index cols, double scale, std::uint64_t seed,
                            std::uint64_t slot) {
  RngStream rng(seed, "init", slot);
  return ad::Parameter(name, rng.uniform_matrix(rows, cols, -scale, scale));
}

ad::Parameter zero_param(const char* name, Index rows, Index cols) {
  return ad::Parameter(name, Matrix::Zero(rows, cols));
}

struct LstmState {
  Var h;
  Var c;
};

LstmState lstm_step(const Var& input_gates, const Var& wh, const Var& bias, const LstmState& s, Index hidden) {
  const Var gates = add_bias(input_gates + matmul(wh, s.h), bias);
  const Var i = sigmoid(slice_rows(gates, 0, hidden));
  const Var f = sigmoid(slice_rows(gates, hidden, hidden));
  const Var g = tanh(slice_rows(gates, 2 * hidden, hidden));
  const Var o = sigmoid(slice_rows(gates, 3 * hidden, hidden));
  const Var c = f * s.c + i * g;
  return {o * tanh(c), c};
}

void validate_ids(const Batch& batch, int vocab) {
  for (Index b = 0; b < batch.tokens.rows(); ++b) {
    for (Index t = 0; t < batch.tokens.cols(); ++t) {
      const int id = batch.tokens(b, t);
      if (id < 0 || id >= vocab) {
        throw InputError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(vocab));
      }
    }
  }
}

Batch single_batch(std::span<const int> ids) {
  Batch b;
  b.tokens.resize(1, static_cast<Index>(ids.size()));
  for (std::size_t t = 0; t < ids.size(); ++t) b.tokens(0, static_cast<Index>(t)) = ids[t];
  b.lengths = {static_cast<int>(ids.size())};
  b.indices = {0};
  return b;
}

}  // namespace

// ---------------------------------------------------------------------------

ModelParams::ModelParams(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  if (cfg.vocab_size < kNumReserved || cfg.embed_dim < 1 || cfg.hidden_dim < 1 || cfg.latent_dim < 1) {
    throw ConfigError("model: vocab_size >= 4 and positive embed/hidden/latent dims required");
  }
  if (cfg.dropout < 0.0 || cfg.dropout >= 1.0) throw ConfigError("model: dropout must lie in [0, 1)");
  const Index v = cfg.vocab_size, e = cfg.embed_dim, h = cfg.hidden_dim, d = cfg.latent_dim;
  const Index wdim = cfg.scalar_w ? 1 : d;
  const double head = 1.0 / std::sqrt(static_cast<double>(h));
  const double zproj = 1.0 / std::sqrt(static_cast<double>(d));

  embedding = uniform_param("embedding", e, v, 0.1, seed, 0);
  enc_wx = uniform_param("enc_wx", 4 * h, e, 0.1, seed, 1);
  enc_wh = uniform_param("enc_wh", 4 * h, h, 0.1, seed, 2);
  enc_b = zero_param("enc_b", 4 * h, 1);
  dec_wx = uniform_param("dec_wx", 4 * h, e + d, 0.1, seed, 3);
  dec_wh = uniform_param("dec_wh", 4 * h, h, 0.1, seed, 4);
  dec_b = zero_param("dec_b", 4 * h, 1);
  init_h_w = uniform_param("init_h_w", h, d, zproj, seed, 5);
  init_h_b = zero_param("init_h_b", h, 1);
  init_c_w = uniform_param("init_c_w", h, d, zproj, seed, 6);
  init_c_b = zero_param("init_c_b", h, 1);
  out_w = uniform_param("out_w", v, h, 0.1, seed, 7);
  out_b = zero_param("out_b", v, 1);
  mu_w = uniform_param("mu_w", d, h, head, seed, 8);
  mu_b = zero_param("mu_b", d, 1);
  bn_gamma = ad::Parameter("bn_gamma", Matrix::Ones(d, 1));
  bn_beta = zero_param("bn_beta", d, 1);
  logvar_w = uniform_param("logvar_w", d, h, head, seed, 9);
  logvar_b = zero_param("logvar_b", d, 1);
  cov_w_w = uniform_param("cov_w_w", wdim, h, head, seed, 10);
  // Start w near 1 so no unit begins stuck at the ReLU floor.
  cov_w_b = ad::Parameter("cov_w_b", Matrix::Ones(wdim, 1));
  cov_a_w = uniform_param("cov_a_w", d, h, head, seed, 11);
  cov_a_b = zero_param("cov_a_b", d, 1);

  bn.running_mean = Eigen::VectorXd::Zero(d);
  bn.running_var = Eigen::VectorXd::Ones(d);
  bn.momentum = cfg.bn_momentum;
  bn.eps = cfg.bn_eps;
}

std::vector<ad::Parameter*> ModelParams::parameters() {
  return {&embedding, &enc_wx,  &enc_wh,   &enc_b,    &dec_wx,   &dec_wh,   &dec_b,    &init_h_w,
          &init_h_b,  &init_c_w, &init_c_b, &out_w,    &out_b,    &mu_w,     &mu_b,     &bn_gamma,
          &bn_beta,   &logvar_w, &logvar_b, &cov_w_w,  &cov_w_b,  &cov_a_w,  &cov_a_b};
}

std::vector<const ad::Parameter*> ModelParams::parameters() const {
  auto* self = const_cast<ModelParams*>(this);
  std::vector<const ad::Parameter*> out;
  for (ad::Parameter* p : self->parameters()) out.push_back(p);
  return out;
}

void ModelParams::zero_grad() {
  for (ad::Parameter* p : parameters()) p->zero_grad();
}

BoundModel BoundModel::bind(ad::Tape& tape, ModelParams& p) {
  BoundModel m;
  m.params = &p;
  m.embedding = tape.parameter(p.embedding);
  m.enc_wx = tape.parameter(p.enc_wx);
  m.enc_wh = tape.parameter(p.enc_wh);
  m.enc_b = tape.parameter(p.enc_b);
  m.dec_wx = tape.parameter(p.dec_wx);
  m.dec_wh = tape.parameter(p.dec_wh);
  m.dec_b = tape.parameter(p.dec_b);
  m.init_h_w = tape.parameter(p.init_h_w);
  m.init_h_b = tape.parameter(p.init_h_b);
  m.init_c_w = tape.parameter(p.init_c_w);
  m.init_c_b = tape.parameter(p.init_c_b);
  m.out_w = tape.parameter(p.out_w);
  m.out_b = tape.parameter(p.out_b);
  m.mu_w = tape.parameter(p.mu_w);
  m.mu_b = tape.parameter(p.mu_b);
  m.bn_gamma = tape.parameter(p.bn_gamma);
  m.bn_beta = tape.parameter(p.bn_beta);
  m.logvar_w = tape.parameter(p.logvar_w);
  m.logvar_b = tape.parameter(p.logvar_b);
  m.cov_w_w = tape.parameter(p.cov_w_w);
  m.cov_w_b = tape.parameter(p.cov_w_b);
  m.cov_a_w = tape.parameter(p.cov_a_w);
  m.cov_a_b = tape.parameter(p.cov_a_b);
  return m;
}

// ---------------------------------------------------------------------------

Var dropout(const Var& x, double rate, Mode mode, RngStream* rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must lie in [0, 1)");
  if (mode == Mode::kEval || rate == 0.0) return x;
  if (rng == nullptr) throw ConfigError("dropout: train mode needs a random stream");
  const double keep = 1.0 - rate;
  Matrix mask(x.rows(), x.cols());
  for (Index j = 0; j < mask.cols(); ++j)
    for (Index i = 0; i < mask.rows(); ++i) mask(i, j) = rng->uniform() < keep ? 1.0 / keep : 0.0;
  return x * x.tape().constant(std::move(mask), "dropout_mask");
}

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, Mode mode) {
  ad::Tape& tape = x.tape();
  if (mode == Mode::kTrain) {
    Eigen::VectorXd mean, var;
    Var y = ad::batch_norm_train(x, gamma, beta, state.eps, &mean, &var);
    const double n = static_cast<double>(x.cols());
    state.running_mean = (1.0 - state.momentum) * state.running_mean + state.momentum * mean;
    state.running_var = (1.0 - state.momentum) * state.running_var + state.momentum * (var * (n / (n - 1.0)));
    return y;
  }
  const Var shift = tape.constant(-state.running_mean, "bn_running_mean");
  const Var inv_std = tape.constant((state.running_var.array() + state.eps).rsqrt().matrix(), "bn_inv_std");
  const Var xhat = scale_rows(add_bias(x, shift), inv_std);
  return add_bias(scale_rows(xhat, gamma), beta);
}

Var encode(BoundModel& m, const Batch& batch, Mode mode, RngStream* dropout_rng) {
  const ModelConfig& cfg = m.params->config;
  ad::Tape& tape = m.embedding.tape();
  const Index hidden = cfg.hidden_dim;
  const Index n = batch.size();
  const Index steps = batch.max_length();
  validate_ids(batch, cfg.vocab_size);

  LstmState state{tape.constant(Matrix::Zero(hidden, n), "h0"), tape.constant(Matrix::Zero(hidden, n), "c0")};
  if (steps == 0 || n == 0) return state.h;

  std::vector<int> ids(static_cast<std::size_t>(steps * n));
  for (Index t = 0; t < steps; ++t)
    for (Index b = 0; b < n; ++b) ids[static_cast<std::size_t>(t * n + b)] = batch.tokens(b, t);

  const Var inputs = dropout(gather_cols(m.embedding, ids), cfg.dropout, mode, dropout_rng);
  const Var input_gates = matmul(m.enc_wx, inputs);

  for (Index t = 0; t < steps; ++t) {
    const LstmState next = lstm_step(slice_cols(input_gates, t * n, n), m.enc_wh, m.enc_b, state, hidden);
    bool all_active = true;
    Matrix mask(hidden, n);
    for (Index b = 0; b < n; ++b) {
      const bool active = t < batch.lengths[static_cast<std::size_t>(b)];
      all_active = all_active && active;
      mask.col(b).setConstant(active ? 1.0 : 0.0);
    }
    if (all_active) {
      state = next;
    } else {
      const Var keep = tape.constant(std::move(mask), "length_mask");
      state.h = state.h + keep * (next.h - state.h);
      state.c = state.c + keep * (next.c - state.c);
    }
  }
  return state.h;
}

PosteriorVars infer_posterior(BoundModel& m, const Var& h, Mode mode) {
  const ModelConfig& cfg = m.params->config;
  PosteriorVars out;
  // A single example has no batch statistics; it is normalized with the running ones.
  const Mode bn_mode = h.cols() < 2 ? Mode::kEval : mode;
  out.mu = batch_norm(add_bias(matmul(m.mu_w, h), m.mu_b), m.bn_gamma, m.bn_beta, m.params->bn, bn_mode);
  out.logvar = add_bias(matmul(m.logvar_w, h), m.logvar_b);
  out.w = relu_floor(add_bias(matmul(m.cov_w_w, h), m.cov_w_b), cfg.w_floor);
  if (cfg.scalar_w) out.w = broadcast_rows(out.w, cfg.latent_dim);
  out.a = tanh(add_bias(matmul(m.cov_a_w, h), m.cov_a_b));
  return out;
}

Var reparam_z(const Var& mu, const Var& logvar, const Var& eps) { return mu + exp(0.5 * logvar) * eps; }

std::int64_t target_token_count(const Batch& batch) {
  std::int64_t total = 0;
  for (int len : batch.lengths) total += len > 0 ? len - 1 : 0;
  return total;
}

Var decode_nll(BoundModel& m, const Var& z, const Batch& batch, Mode mode, RngStream* dropout_rng) {
  const ModelConfig& cfg = m.params->config;
  ad::Tape& tape = m.embedding.tape();
  const Index hidden = cfg.hidden_dim;
  const Index n = batch.size();
  const Index steps = batch.max_length() - 1;
  validate_ids(batch, cfg.vocab_size);
  if (z.rows() != cfg.latent_dim || z.cols() != n) throw ShapeError("decode_nll: z must be latent_dim x batch");
  if (steps <= 0) return tape.constant(Matrix::Zero(1, 1), "empty_nll");

  std::vector<int> inputs(static_cast<std::size_t>(steps * n));
  std::vector<int> targets(static_cast<std::size_t>(steps * n));
  for (Index t = 0; t < steps; ++t) {
    for (Index b = 0; b < n; ++b) {
      const auto k = static_cast<std::size_t>(t * n + b);
      inputs[k] = batch.tokens(b, t);
      targets[k] = t + 1 < batch.lengths[static_cast<std::size_t>(b)] ? batch.tokens(b, t + 1) : -1;
    }
  }

  const Var embedded = dropout(gather_cols(m.embedding, inputs), cfg.dropout, mode, dropout_rng);
  const std::vector<Var> z_copies(static_cast<std::size_t>(steps), z);
  const Var input_gates = matmul(m.dec_wx, concat_rows(embedded, concat_cols(z_copies)));

  LstmState state{add_bias(matmul(m.init_h_w, z), m.init_h_b), add_bias(matmul(m.init_c_w, z), m.init_c_b)};
  std::vector<Var> outputs;
  outputs.reserve(static_cast<std::size_t>(steps));
  for (Index t = 0; t < steps; ++t) {
    state = lstm_step(slice_cols(input_gates, t * n, n), m.dec_wh, m.dec_b, state, hidden);
    outputs.push_back(state.h);
  }
  const Var logits = add_bias(matmul(m.out_w, concat_cols(outputs)), m.out_b);
  return softmax_cross_entropy(logits, targets);
}

Eigen::VectorXd encode_sequence(ModelParams& params, std::span<const int> ids) {
  ad::Tape tape;
  BoundModel m = BoundModel::bind(tape, params);
  const Batch b = single_batch(ids);
  return encode(m, b, Mode::kEval, nullptr).value().col(0);
}

double decode_sequence_nll(ModelParams& params, const Eigen::VectorXd& z, std::span<const int> ids) {
  ad::Tape tape;
  BoundModel m = BoundModel::bind(tape, params);
  const Batch b = single_batch(ids);
  return decode_nll(m, tape.constant(z), b, Mode::kEval, nullptr).scalar();
}

std::vector<int> greedy_decode(ModelParams& params, const Eigen::VectorXd& z, std::size_t max_len) {
  const ModelConfig& cfg = params.config;
  if (z.size() != cfg.latent_dim) throw ShapeError("greedy_decode: z has wrong length");
  ad::Tape tape;
  tape.set_check_finite(false);
  BoundModel m = BoundModel::bind(tape, params);
  const Var zv = tape.constant(z);
  LstmState state{add_bias(matmul(m.init_h_w, zv), m.init_h_b), add_bias(matmul(m.init_c_w, zv), m.init_c_b)};
  std::vector<int> out;
  int prev = kBosId;
  while (out.size() < max_len) {
    const int ids[1] = {prev};
    const Var x = concat_rows(gather_cols(m.embedding, ids), zv);
    state = lstm_step(matmul(m.dec_wx, x), m.dec_wh, m.dec_b, state, cfg.hidden_dim);
    const Matrix logits = params.out_w.value * state.h.value() + params.out_b.value;
    Index best = 0;
    logits.col(0).maxCoeff(&best);
    if (best == kEosId) break;
    out.push_back(static_cast<int>(best));
    prev = static_cast<int>(best);
  }
  return out;
}

}  // namespace cvlm
