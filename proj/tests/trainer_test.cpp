#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include <cvlm/trainer.hpp>

#include "test_support.hpp"

namespace cvlm {
namespace {

using cvlm::testing::scratch_dir;
using cvlm::testing::slurp;
using cvlm::testing::tiny_config;
using cvlm::testing::tiny_train;
using cvlm::testing::tiny_valid;

TEST(Adam, FirstStepMovesByLearningRate) {
  ad::Parameter theta("theta", Eigen::MatrixXd::Zero(1, 1));
  theta.grad(0, 0) = 2.0;
  ad::Parameter* p = &theta;
  const ad::Parameter* cp = &theta;
  AdamState state = AdamState::zeros_like(std::span<const ad::Parameter* const>(&cp, 1));
  adam_step(std::span<ad::Parameter* const>(&p, 1), state, 1e-3);
  EXPECT_NEAR(theta.value(0, 0), -1e-3, 1e-9);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ad::Parameter theta("theta", Eigen::MatrixXd::Constant(2, 2, 0.7));
  ad::Parameter* p = &theta;
  const ad::Parameter* cp = &theta;
  AdamState state = AdamState::zeros_like(std::span<const ad::Parameter* const>(&cp, 1));
  adam_step(std::span<ad::Parameter* const>(&p, 1), state, 1e-3);
  EXPECT_EQ(theta.value, Eigen::MatrixXd::Constant(2, 2, 0.7));
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, NonFiniteGradientAbortsBeforeAnyUpdate) {
  ad::Parameter a("alpha", Eigen::MatrixXd::Ones(1, 1));
  ad::Parameter b("beta_param", Eigen::MatrixXd::Ones(1, 1));
  a.grad(0, 0) = 1.0;
  b.grad(0, 0) = std::numeric_limits<double>::infinity();
  ad::Parameter* ps[] = {&a, &b};
  const ad::Parameter* cps[] = {&a, &b};
  AdamState state = AdamState::zeros_like(cps);
  try {
    adam_step(ps, state, 1e-3);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("beta_param"), std::string::npos);
  }
  EXPECT_EQ(a.value(0, 0), 1.0);
  EXPECT_EQ(state.step, 0);
}

TEST(GradClip, RescalesToMaxNorm) {
  ad::Parameter a("a", Eigen::MatrixXd::Zero(1, 2));
  a.grad << 3.0, 4.0;
  ad::Parameter* p = &a;
  EXPECT_DOUBLE_EQ(clip_grad_norm(std::span<ad::Parameter* const>(&p, 1), 1.0), 5.0);
  EXPECT_NEAR(a.grad.norm(), 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(clip_grad_norm(std::span<ad::Parameter* const>(&p, 1), 0.0), 1.0);
}

TEST(Train, IdenticalRunsAreBitIdentical) {
  const auto a = train(tiny_config(), tiny_train(), tiny_valid());
  const auto b = train(tiny_config(), tiny_train(), tiny_valid());
  EXPECT_TRUE(serialize_checkpoint(a.final_state) == serialize_checkpoint(b.final_state));
  ASSERT_EQ(a.metrics.size(), b.metrics.size());
  for (std::size_t i = 0; i < a.metrics.size(); ++i) {
    EXPECT_EQ(format_metrics_row(a.metrics[i]), format_metrics_row(b.metrics[i]));
  }
}

TEST(Train, MetricsFileLayout) {
  const auto dir = scratch_dir();
  TrainOptions opts;
  opts.out_dir = dir;
  const auto result = train(tiny_config(), tiny_train(), tiny_valid(), opts);
  const std::vector<std::string> lines = read_lines(dir / "metrics.csv");
  ASSERT_GE(lines.size(), 3u);
  EXPECT_EQ(lines[0],
            "epoch,step,split,rec_nll,kl,log_copula,sum_log_marg,elbo_nll,ppl,anneal_w,lambda,grad_norm,wallclock_s");
  EXPECT_EQ(lines.size(), result.metrics.size() + 1);
  double prev_anneal = -1.0;
  int valid_rows = 0;
  for (const MetricsRow& r : result.metrics) {
    EXPECT_GE(r.anneal_w, prev_anneal);
    prev_anneal = r.anneal_w;
    EXPECT_EQ(r.wallclock_s, 0.0);
    EXPECT_NEAR(r.elbo_nll, r.rec_nll + r.kl, 1e-9 * std::max(1.0, r.elbo_nll));
    if (r.split == "valid") ++valid_rows;
  }
  EXPECT_EQ(valid_rows, 2);
  for (const char* f : {"last.ckpt", "best.ckpt", "vocab.txt", "timing.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  const auto dir = scratch_dir();
  TrainingConfig cfg = tiny_config();
  cfg.epochs = 3;
  TrainOptions full;
  full.out_dir = dir / "full";
  train(cfg, tiny_train(), tiny_valid(), full);

  TrainingConfig first = cfg;
  first.epochs = 1;
  TrainOptions part;
  part.out_dir = dir / "split";
  train(first, tiny_train(), tiny_valid(), part);
  part.resume_from = dir / "split" / "last.ckpt";
  train(cfg, tiny_train(), tiny_valid(), part);

  EXPECT_TRUE(slurp(dir / "full" / "metrics.csv") == slurp(dir / "split" / "metrics.csv"));
  EXPECT_TRUE(slurp(dir / "full" / "last.ckpt") == slurp(dir / "split" / "last.ckpt"));
}

TEST(Train, ResumeRejectsIncompatibleModel) {
  const auto dir = scratch_dir();
  TrainOptions opts;
  opts.out_dir = dir;
  TrainingConfig cfg = tiny_config();
  cfg.epochs = 1;
  train(cfg, tiny_train(), tiny_valid(), opts);
  opts.resume_from = dir / "last.ckpt";
  cfg.hidden_dim = 14;
  cfg.epochs = 2;
  EXPECT_THROW(train(cfg, tiny_train(), tiny_valid(), opts), ConfigError);
}

TEST(Train, MeanFieldEqualsCopulaAtLambdaZero) {
  TrainingConfig a = tiny_config();
  a.lambda = 0.0;
  a.mode = ObjectiveMode::kCopula;
  TrainingConfig b = a;
  b.mode = ObjectiveMode::kMeanField;
  const auto ra = train(a, tiny_train(), tiny_valid());
  const auto rb = train(b, tiny_train(), tiny_valid());
  ASSERT_EQ(ra.metrics.size(), rb.metrics.size());
  for (std::size_t i = 0; i < ra.metrics.size(); ++i) {
    EXPECT_EQ(format_metrics_row(ra.metrics[i]), format_metrics_row(rb.metrics[i]));
  }
}

TEST(Train, CopulaWeightRaisesValidationKl) {
  TrainingConfig a = tiny_config();
  a.lambda = 0.0;
  a.epochs = 3;
  TrainingConfig b = a;
  b.lambda = 0.5;
  EXPECT_GT(train(b, tiny_train(), tiny_valid()).final_valid.kl, train(a, tiny_train(), tiny_valid()).final_valid.kl);
}

TEST(Train, OverfitsASingleSentence) {
  TrainingConfig cfg = tiny_config();
  cfg.hidden_dim = 32;
  cfg.embed_dim = 16;
  cfg.dropout = 0.0;
  cfg.lambda = 0.0;
  cfg.lr = 1e-2;
  cfg.epochs = 200;
  cfg.log_interval = 1000;
  const std::vector<std::string> sentence = {"the old sailor slowly painted a small wooden boat"};
  const auto result = train(cfg, sentence, sentence);
  EXPECT_EQ(result.final_state.progress.global_step, 200);
  const double per_token = result.final_valid.rec_nll_total / static_cast<double>(result.final_valid.tokens_evaluated);
  EXPECT_LT(per_token, 0.1);

  Checkpoint ckpt = result.final_state;
  const TokenIds ids = encode_line(sentence[0], ckpt.vocab, 30);
  const Eigen::VectorXd z = posterior_means(ckpt.params, std::vector<TokenIds>{ids}).col(0);
  EXPECT_EQ(decode_ids(greedy_decode(ckpt.params, z, 30), ckpt.vocab), sentence[0]);
}

TEST(Train, NonFiniteLossKeepsLastGoodCheckpoint) {
  const auto dir = scratch_dir();
  TrainOptions opts;
  opts.out_dir = dir;
  TrainingConfig cfg = tiny_config();
  cfg.epochs = 1;
  train(cfg, tiny_train(), tiny_valid(), opts);
  const std::string good = slurp(dir / "last.ckpt");

  opts.resume_from = dir / "last.ckpt";
  cfg.epochs = 3;
  cfg.lr = 1e300;
  cfg.grad_clip = 0.0;
  EXPECT_THROW(train(cfg, tiny_train(), tiny_valid(), opts), NumericError);
  EXPECT_TRUE(slurp(dir / "last.ckpt") == good);
}

TEST(Train, GradientGatePassesAtInitialization) {
  TrainingConfig cfg = tiny_config();
  const auto lines = tiny_train();
  const Vocabulary vocab = Vocabulary::build(lines, static_cast<std::size_t>(cfg.vocab_max));
  const auto ids = encode_corpus(lines, vocab, static_cast<std::size_t>(cfg.max_len));
  ModelParams params(model_config(cfg, static_cast<int>(vocab.size())), cfg.seed);
  const ad::GradientReport r = gradient_gate(params, ids, cfg);
  EXPECT_TRUE(r.passed) << r.max_relative_error;
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto dir = scratch_dir();
  const auto result = train(tiny_config(), tiny_train(), tiny_valid());
  save_checkpoint(result.final_state, dir / "a.ckpt");
  save_checkpoint(load_checkpoint(dir / "a.ckpt"), dir / "b.ckpt");
  const std::string a = slurp(dir / "a.ckpt");
  EXPECT_TRUE(a == slurp(dir / "b.ckpt"));
  EXPECT_EQ(a.substr(0, 4), "CVLM");
}

class CorruptCheckpoint : public ::testing::Test {
 protected:
  void SetUp() override {
    TrainingConfig cfg = tiny_config();
    cfg.epochs = 1;
    bytes_ = serialize_checkpoint(train(cfg, tiny_train(), tiny_valid()).final_state);
  }
  std::vector<unsigned char> bytes_;
};

TEST_F(CorruptCheckpoint, FlippedTrailingByteFailsTheChecksum) {
  bytes_[bytes_.size() - 5] ^= 0x40;
  try {
    deserialize_checkpoint(bytes_);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos) << e.what();
  }
}

TEST_F(CorruptCheckpoint, TruncationIsDetected) {
  bytes_.resize(bytes_.size() / 2);
  EXPECT_THROW(deserialize_checkpoint(bytes_), CheckpointError);
}

TEST_F(CorruptCheckpoint, AppendedBytesAreDetected) {
  bytes_.push_back(0);
  EXPECT_THROW(deserialize_checkpoint(bytes_), CheckpointError);
}

TEST_F(CorruptCheckpoint, BadMagicAndVersion) {
  auto magic = bytes_;
  magic[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(magic), CheckpointError);
  auto version = bytes_;
  version[4] = 99;
  try {
    deserialize_checkpoint(version);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, MissingFileIsAnIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), IoError);
}

}  // namespace
}  // namespace cvlm
