#ifndef CVLM_MODEL_HPP
#define CVLM_MODEL_HPP

// LSTM encoder/decoder language model with Gaussian inference heads.
//
//   h  = LSTM_enc(x)                               (final hidden state)
//   mu = BatchNorm(W_mu h + b_mu),  logvar = W_s h + b_s
//   w  = max(ReLU(W_1 h + b_1), w_floor),  a = tanh(W_2 h + b_2)
//   z  = mu + exp(logvar / 2) * eps
//   p(x | z): LSTM_dec with (h0, c0) affine in z and z appended to every input.
//
// All batched tensors keep one example per column.

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include <cvlm/autodiff.hpp>
#include <cvlm/data.hpp>
#include <cvlm/rng.hpp>

namespace cvlm {

enum class Mode { kTrain, kEval };

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 200;
  int hidden_dim = 200;
  int latent_dim = 32;
  double dropout = 0.5;
  /// Single shared diagonal weight w (Sigma = w I + a a^T).
  bool scalar_w = false;
  double w_floor = 1e-4;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
};

/// Running statistics of the batch-normalized mu head.
struct BatchNormState {
  Eigen::VectorXd running_mean;
  Eigen::VectorXd running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

class ModelParams {
 public:
  ModelParams() = default;
  /// Uniform(-0.1, 0.1) for embedding/recurrent/output weights, uniform with
  /// scale 1/sqrt(fan-in) for the latent heads and z projections, zero biases
  /// except the w head (1), batch-norm gamma = 1.
  ModelParams(const ModelConfig& config, std::uint64_t seed);

  ModelConfig config;

  ad::Parameter embedding;  // E x V
  ad::Parameter enc_wx, enc_wh, enc_b;
  ad::Parameter dec_wx, dec_wh, dec_b;
  ad::Parameter init_h_w, init_h_b, init_c_w, init_c_b;
  ad::Parameter out_w, out_b;
  ad::Parameter mu_w, mu_b, bn_gamma, bn_beta;
  ad::Parameter logvar_w, logvar_b;
  ad::Parameter cov_w_w, cov_w_b;
  ad::Parameter cov_a_w, cov_a_b;
  BatchNormState bn;

  /// Declaration order; the checkpoint layout follows it.
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  void zero_grad();
};

/// Parameters bound as leaves of one tape.
struct BoundModel {
  ModelParams* params = nullptr;
  ad::Var embedding;
  ad::Var enc_wx, enc_wh, enc_b;
  ad::Var dec_wx, dec_wh, dec_b;
  ad::Var init_h_w, init_h_b, init_c_w, init_c_b;
  ad::Var out_w, out_b;
  ad::Var mu_w, mu_b, bn_gamma, bn_beta;
  ad::Var logvar_w, logvar_b;
  ad::Var cov_w_w, cov_w_b;
  ad::Var cov_a_w, cov_a_b;

  static BoundModel bind(ad::Tape& tape, ModelParams& params);
};

struct PosteriorVars {
  ad::Var mu;
  ad::Var logvar;
  ad::Var w;
  ad::Var a;
};

/// Inverted dropout: identity when rate == 0 or in eval mode.
ad::Var dropout(const ad::Var& x, double rate, Mode mode, RngStream* rng);

/// Batch-norm with learnable scale/shift. Train mode normalizes by batch
/// statistics and moves `state` toward them; eval mode uses `state`.
ad::Var batch_norm(const ad::Var& x, const ad::Var& gamma, const ad::Var& beta, BatchNormState& state, Mode mode);

/// Final encoder hidden state for each example (H x B). An empty batch
/// (zero-length sequences) returns the zero initial state.
ad::Var encode(BoundModel& m, const Batch& batch, Mode mode, RngStream* dropout_rng);

PosteriorVars infer_posterior(BoundModel& m, const ad::Var& h, Mode mode);

/// z = mu + exp(logvar / 2) * eps.
ad::Var reparam_z(const ad::Var& mu, const ad::Var& logvar, const ad::Var& eps);

/// Teacher-forced cross-entropy summed over every target token (eos included,
/// bos excluded) of every example; 1 x 1.
ad::Var decode_nll(BoundModel& m, const ad::Var& z, const Batch& batch, Mode mode, RngStream* dropout_rng);

/// Number of predicted tokens in a batch (lengths minus the bos).
std::int64_t target_token_count(const Batch& batch);

/// Single-sequence conveniences (eval mode, no dropout).
Eigen::VectorXd encode_sequence(ModelParams& params, std::span<const int> ids);
double decode_sequence_nll(ModelParams& params, const Eigen::VectorXd& z, std::span<const int> ids);

/// Argmax decoding from bos until eos or max_len tokens; eos is not returned.
std::vector<int> greedy_decode(ModelParams& params, const Eigen::VectorXd& z, std::size_t max_len);

}  // namespace cvlm

#endif  // CVLM_MODEL_HPP
