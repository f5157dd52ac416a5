#include <cmath>

#include <gtest/gtest.h>

#include <cvlm/batch_objective.hpp>
#include <cvlm/model.hpp>
#include <cvlm/verify.hpp>

namespace cvlm {
namespace {

using ad::Matrix;
using ad::Tape;
using ad::Var;

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 12;
  c.embed_dim = 5;
  c.hidden_dim = 6;
  c.latent_dim = 3;
  c.dropout = 0.0;
  return c;
}

std::vector<TokenIds> small_corpus() {
  return {{kBosId, 4, 5, 6, kEosId}, {kBosId, 7, kEosId}, {kBosId, 8, 9, 10, 11, 4, kEosId}, {kBosId, kEosId}};
}

TEST(Encode, EmptySequenceGivesZeroState) {
  ModelParams params(small_config(), 1);
  Tape tape;
  BoundModel m = BoundModel::bind(tape, params);
  Batch empty;
  empty.tokens.resize(2, 0);
  empty.lengths = {0, 0};
  empty.indices = {0, 1};
  const Var h = encode(m, empty, Mode::kEval, nullptr);
  EXPECT_EQ(h.value(), Matrix::Zero(6, 2));
}

TEST(Encode, EvalModeIsDeterministic) {
  ModelParams params(small_config(), 1);
  const TokenIds ids = {kBosId, 4, 5, kEosId};
  EXPECT_EQ(encode_sequence(params, ids), encode_sequence(params, ids));
}

TEST(Encode, BatchedMatchesSingleSequence) {
  ModelParams params(small_config(), 2);
  const auto corpus = small_corpus();
  const Batch batch = make_batches(corpus, 4, std::nullopt).front();
  Tape tape;
  BoundModel m = BoundModel::bind(tape, params);
  const Matrix h = encode(m, batch, Mode::kEval, nullptr).value();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EXPECT_LE((h.col(static_cast<Eigen::Index>(i)) - encode_sequence(params, corpus[i])).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Encode, OutOfVocabularyIdIsAnInputError) {
  ModelParams params(small_config(), 1);
  const TokenIds ids = {kBosId, 12, kEosId};
  EXPECT_THROW(encode_sequence(params, ids), InputError);
}

TEST(InferPosterior, ZeroHeads) {
  ModelParams params(small_config(), 3);
  for (ad::Parameter* p : {&params.mu_w, &params.mu_b, &params.logvar_w, &params.logvar_b, &params.cov_w_w,
                           &params.cov_w_b, &params.cov_a_w, &params.cov_a_b}) {
    p->value.setZero();
  }
  Tape tape;
  BoundModel m = BoundModel::bind(tape, params);
  const Var h = tape.constant(Matrix::Random(6, 3));
  const PosteriorVars post = infer_posterior(m, h, Mode::kEval);
  EXPECT_EQ(post.mu.value(), Matrix::Zero(3, 3));
  EXPECT_EQ(post.logvar.value(), Matrix::Zero(3, 3));
  EXPECT_EQ(post.w.value(), Matrix::Constant(3, 3, params.config.w_floor));
  EXPECT_EQ(post.a.value(), Matrix::Zero(3, 3));
}

TEST(InferPosterior, OutputShapesDependOnConfigOnly) {
  ModelParams params(small_config(), 3);
  for (Eigen::Index n : {1, 2, 7}) {
    Tape tape;
    BoundModel m = BoundModel::bind(tape, params);
    const PosteriorVars post = infer_posterior(m, tape.constant(Matrix::Random(6, n)), Mode::kTrain);
    for (const Var& v : {post.mu, post.logvar, post.w, post.a}) {
      EXPECT_EQ(v.rows(), 3);
      EXPECT_EQ(v.cols(), n);
    }
  }
}

TEST(InferPosterior, ScalarWIsSharedAcrossDimensions) {
  ModelConfig cfg = small_config();
  cfg.scalar_w = true;
  ModelParams params(cfg, 4);
  EXPECT_EQ(params.cov_w_w.value.rows(), 1);
  Tape tape;
  BoundModel m = BoundModel::bind(tape, params);
  const Matrix w = infer_posterior(m, tape.constant(Matrix::Random(6, 2)), Mode::kEval).w.value();
  ASSERT_EQ(w.rows(), 3);
  EXPECT_EQ(w.row(0), w.row(2));
}

TEST(ReparamZ, KnownValues) {
  Tape tape;
  const Var mu = tape.constant(Matrix::Constant(1, 1, 1.0));
  const Var logvar = tape.constant(Matrix::Constant(1, 1, 2.0 * std::log(2.0)));
  EXPECT_EQ(reparam_z(mu, logvar, tape.constant(Matrix::Zero(1, 1))).scalar(), 1.0);
  EXPECT_NEAR(reparam_z(mu, logvar, tape.constant(Matrix::Constant(1, 1, 0.5))).scalar(), 2.0, 1e-15);
}

TEST(ReparamZ, EmpiricalMomentsMatch) {
  const int n = 100000;
  const double mu = -0.7, sigma = 1.8;
  RngStream rng(6, "reparam_moments");
  Tape tape;
  const Var z = reparam_z(tape.constant(Matrix::Constant(1, n, mu)),
                          tape.constant(Matrix::Constant(1, n, 2.0 * std::log(sigma))),
                          tape.constant(rng.normal_matrix(1, n)));
  const double mean = z.value().mean();
  const double var = (z.value().array() - mean).square().sum() / (n - 1);
  EXPECT_LE(std::abs(mean - mu), 3.0 * sigma / std::sqrt(n));
  EXPECT_LE(std::abs(var - sigma * sigma), 3.0 * sigma * sigma * std::sqrt(2.0 / (n - 1)));
}

TEST(DecodeNll, UniformLogitsCostLogV) {
  ModelParams params(small_config(), 5);
  params.out_w.value.setZero();
  params.out_b.value.setZero();
  const TokenIds ids = {kBosId, kEosId};
  EXPECT_NEAR(decode_sequence_nll(params, Eigen::VectorXd::Random(3), ids), std::log(12.0), 1e-12);
}

TEST(DecodeNll, BatchedMatchesSingleSequence) {
  ModelParams params(small_config(), 6);
  const auto corpus = small_corpus();
  const Batch batch = make_batches(corpus, 4, std::nullopt).front();
  const Matrix z = Matrix::Random(3, 4);
  Tape tape;
  BoundModel m = BoundModel::bind(tape, params);
  const double batched = decode_nll(m, tape.constant(z), batch, Mode::kEval, nullptr).scalar();
  double single = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    single += decode_sequence_nll(params, z.col(static_cast<Eigen::Index>(i)), corpus[i]);
  }
  EXPECT_NEAR(batched, single, 1e-10);
  EXPECT_EQ(target_token_count(batch), 4 + 2 + 6 + 1);
}

TEST(GreedyDecode, DeterministicAndBounded) {
  ModelParams params(small_config(), 7);
  const Eigen::VectorXd z = Eigen::VectorXd::Random(3);
  const auto a = greedy_decode(params, z, 6);
  EXPECT_EQ(a, greedy_decode(params, z, 6));
  EXPECT_LE(a.size(), 6u);
  for (int id : a) EXPECT_NE(id, kEosId);
}

TEST(BatchNorm, ConstantBatchNormalizesToZero) {
  Tape tape;
  BatchNormState state{Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2), 0.1, 1e-5};
  const Var y = batch_norm(tape.constant(Matrix::Constant(2, 5, 4.0)), tape.constant(Matrix::Ones(2, 1)),
                           tape.constant(Matrix::Zero(2, 1)), state, Mode::kTrain);
  EXPECT_LE(y.value().cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_NEAR(state.running_mean[0], 0.4, 1e-15);
}

TEST(BatchNorm, SingletonBatchInTrainModeIsAConfigError) {
  Tape tape;
  BatchNormState state{Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2), 0.1, 1e-5};
  EXPECT_THROW(batch_norm(tape.constant(Matrix::Ones(2, 1)), tape.constant(Matrix::Ones(2, 1)),
                          tape.constant(Matrix::Zero(2, 1)), state, Mode::kTrain),
               ConfigError);
}

TEST(BatchNorm, EvalModeUsesRunningStatistics) {
  Tape tape;
  BatchNormState state{Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Constant(1, 4.0), 0.1, 0.0};
  const Var y = batch_norm(tape.constant(Matrix::Constant(1, 1, 6.0)), tape.constant(Matrix::Constant(1, 1, 3.0)),
                           tape.constant(Matrix::Constant(1, 1, 1.0)), state, Mode::kEval);
  EXPECT_DOUBLE_EQ(y.scalar(), 3.0 * (6.0 - 2.0) / 2.0 + 1.0);
}

TEST(Dropout, IdentityCasesAndErrors) {
  Tape tape;
  const Var x = tape.constant(Matrix::Random(4, 4));
  RngStream rng(1, "dropout_test");
  EXPECT_EQ(dropout(x, 0.0, Mode::kTrain, &rng).value(), x.value());
  EXPECT_EQ(dropout(x, 0.5, Mode::kEval, nullptr).value(), x.value());
  EXPECT_THROW(dropout(x, 1.0, Mode::kTrain, &rng), ConfigError);
}

TEST(Dropout, InvertedScalingKeepsTheMean) {
  Tape tape;
  const Var x = tape.constant(Matrix::Ones(200, 200));
  RngStream rng(2, "dropout_mean");
  const Matrix y = dropout(x, 0.3, Mode::kTrain, &rng).value();
  EXPECT_NEAR(y.mean(), 1.0, 0.02);
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    ASSERT_TRUE(y.data()[i] == 0.0 || std::abs(y.data()[i] - 1.0 / 0.7) < 1e-15);
  }
}

TEST(MicroModel, EndToEndGradientWithRunningStatistics) {
  MicroModelSpec spec;
  spec.train_mode_bn = false;
  const ad::GradientReport r = micro_model_gradient_check(spec, 1e-4);
  for (const auto& t : r.tensors) EXPECT_LE(t.relative_error, 1e-4) << t.name;
}

TEST(MicroModel, EndToEndGradientWithBatchStatistics) {
  MicroModelSpec spec;
  spec.train_mode_bn = true;
  const ad::GradientReport r = micro_model_gradient_check(spec, 1e-4);
  for (const auto& t : r.tensors) EXPECT_LE(t.relative_error, 1e-4) << t.name;
}

TEST(BatchObjective, FiniteAndConsistentWithComposeLoss) {
  ModelParams params(small_config(), 8);
  const auto corpus = small_corpus();
  const Batch batch = make_batches(corpus, 4, std::nullopt).front();
  const BatchNoise noise = training_noise(1, 0, 0, 3, 4, false);
  ObjectiveOptions opts;
  opts.lambda = 0.3;
  opts.anneal_w = 0.6;
  Tape tape;
  const BatchObjective out = batch_objective(tape, params, batch, noise, opts, Mode::kTrain, nullptr);
  const LossBreakdown& t = out.totals;
  EXPECT_TRUE(std::isfinite(out.objective.scalar()));
  EXPECT_NEAR(out.objective.scalar() * 4, t.rec_nll + 0.6 * t.kl - 0.3 * (t.log_copula + t.sum_log_marginals),
              1e-9);
  EXPECT_EQ(out.tokens, 13);
}

TEST(BatchObjective, MeanFieldIgnoresLambda) {
  ObjectiveOptions opts;
  opts.mode = ObjectiveMode::kMeanField;
  opts.lambda = 0.5;
  EXPECT_EQ(effective_lambda(opts), 0.0);
  opts.mode = ObjectiveMode::kCopula;
  opts.anneal_copula = true;
  opts.anneal_w = 0.5;
  EXPECT_EQ(effective_lambda(opts), 0.25);
}

TEST(BatchObjective, ModeNamesRoundTrip) {
  for (ObjectiveMode m : {ObjectiveMode::kMeanField, ObjectiveMode::kCopula, ObjectiveMode::kFullCov}) {
    EXPECT_EQ(objective_mode_from_string(to_string(m)), m);
  }
  EXPECT_THROW(objective_mode_from_string("vamp"), ConfigError);
}

TEST(BatchObjective, FullCovUsesClosedFormKl) {
  ModelParams params(small_config(), 9);
  const auto corpus = small_corpus();
  const Batch batch = make_batches(corpus, 4, std::nullopt).front();
  const BatchNoise noise = training_noise(1, 0, 0, 3, 4, false);
  ObjectiveOptions opts;
  opts.mode = ObjectiveMode::kFullCov;
  opts.lambda = 0.4;
  Tape tape;
  const BatchObjective out = batch_objective(tape, params, batch, noise, opts, Mode::kEval, nullptr);
  double kl = 0.0;
  for (Eigen::Index b = 0; b < 4; ++b) {
    const DiagRankOneCov<double> cov(out.posterior.w.value().col(b), out.posterior.a.value().col(b));
    kl += kl_fullcov_gaussian_std_normal(out.posterior.mu.value().col(b), cov);
  }
  EXPECT_NEAR(out.totals.kl, kl, 1e-10);
  EXPECT_EQ(out.lambda_effective, 0.0);
  EXPECT_EQ(out.totals.modified_objective, out.totals.elbo_nll);
}

}  // namespace
}  // namespace cvlm
