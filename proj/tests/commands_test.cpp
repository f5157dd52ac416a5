#include <sstream>

#include <gtest/gtest.h>

#include <cvlm/commands.hpp>
#include <cvlm/trainer.hpp>

#include "test_support.hpp"

namespace cvlm {
namespace {

namespace fs = std::filesystem;
using cvlm::testing::scratch_dir;
using cvlm::testing::slurp;
using cvlm::testing::tiny_config;
using cvlm::testing::write_lines;

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

template <typename Command, typename Fn>
Outcome run(Fn fn, const Command& cmd) {
  std::ostringstream out, err;
  const int code = fn(cmd, out, err);
  return {code, out.str(), err.str()};
}

TrainingConfig config_in(const fs::path& dir) {
  write_lines(dir / "train.txt", synthetic_corpus({96, 1}));
  write_lines(dir / "valid.txt", synthetic_corpus({24, 2}));
  TrainingConfig c = tiny_config();
  c.train_path = (dir / "train.txt").string();
  c.valid_path = (dir / "valid.txt").string();
  c.out_dir = (dir / "run").string();
  return c;
}

TEST(CmdTrain, MissingTrainPathNamesTheKey) {
  TrainingConfig c = config_in(scratch_dir());
  c.train_path.clear();
  const Outcome r = run(cmd_train, TrainCommand{c, std::nullopt, true});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("train_path"), std::string::npos) << r.err;
}

TEST(CmdTrain, UnreadableCorpusIsAnIoError) {
  TrainingConfig c = config_in(scratch_dir());
  c.valid_path = "/nonexistent/valid.txt";
  EXPECT_EQ(run(cmd_train, TrainCommand{c, std::nullopt, true}).code, kExitIo);
}

TEST(CmdTrain, NonFiniteLossHasItsOwnExitCode) {
  const fs::path dir = scratch_dir();
  TrainingConfig c = config_in(dir);
  c.epochs = 1;
  ASSERT_EQ(run(cmd_train, TrainCommand{c, std::nullopt, true}).code, kExitOk);
  c.epochs = 2;
  c.lr = 1e300;
  c.grad_clip = 0.0;
  EXPECT_EQ(run(cmd_train, TrainCommand{c, dir / "run" / "last.ckpt", true}).code, kExitNumeric);
}

TEST(CmdTrain, DeterministicRunsAreByteIdentical) {
  const fs::path dir = scratch_dir();
  TrainingConfig c = config_in(dir);
  ASSERT_EQ(run(cmd_train, TrainCommand{c, std::nullopt, true}).code, kExitOk);
  fs::rename(dir / "run", dir / "first");
  ASSERT_EQ(run(cmd_train, TrainCommand{c, std::nullopt, true}).code, kExitOk);
  for (const char* f : {"metrics.csv", "last.ckpt", "best.ckpt", "vocab.txt", "config.resolved"}) {
    EXPECT_TRUE(slurp(dir / "first" / f) == slurp(dir / "run" / f)) << f;
  }
}

TEST(CmdTrain, ResolvedConfigReproducesTheRun) {
  const fs::path dir = scratch_dir();
  TrainingConfig c = config_in(dir);
  ASSERT_EQ(run(cmd_train, TrainCommand{c, std::nullopt, true}).code, kExitOk);
  TrainingConfig replay = resolve_config(dir / "run" / "config.resolved", {{"out_dir", (dir / "replay").string()}});
  ASSERT_EQ(run(cmd_train, TrainCommand{replay, std::nullopt, true}).code, kExitOk);
  EXPECT_TRUE(slurp(dir / "run" / "metrics.csv") == slurp(dir / "replay" / "metrics.csv"));
  Checkpoint a = load_checkpoint(dir / "run" / "last.ckpt");
  Checkpoint b = load_checkpoint(dir / "replay" / "last.ckpt");
  a.config.out_dir = b.config.out_dir;
  EXPECT_TRUE(serialize_checkpoint(a) == serialize_checkpoint(b));
}

TEST(CmdTrain, LambdaZeroExcludesTheCopulaTerm) {
  const fs::path dir = scratch_dir();
  TrainingConfig c = config_in(dir);
  c.lambda = 0.0;
  c.epochs = 1;
  ASSERT_EQ(run(cmd_train, TrainCommand{c, std::nullopt, true}).code, kExitOk);
  const Checkpoint ckpt = load_checkpoint(dir / "run" / "last.ckpt");
  EvalOptions o;
  o.objective = objective_options(ckpt.config, 1.0);
  Checkpoint copy = ckpt;
  const EvalReport r = evaluate(copy.params, encode_corpus(read_lines(c.valid_path), ckpt.vocab, 30), o);
  EXPECT_NE(r.log_copula, 0.0);
  EXPECT_DOUBLE_EQ(r.modified_objective, r.nll);
}

class TrainedRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new fs::path(std::filesystem::temp_directory_path() / "cvlm_commands_trained");
    fs::remove_all(*dir_);
    fs::create_directories(*dir_);
    std::ostringstream sink;
    ASSERT_EQ(cmd_train(TrainCommand{config_in(*dir_), std::nullopt, true}, sink, sink), kExitOk);
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path ckpt() { return *dir_ / "run" / "last.ckpt"; }
  static fs::path valid() { return *dir_ / "valid.txt"; }
  static fs::path* dir_;
};

fs::path* TrainedRun::dir_ = nullptr;

TEST_F(TrainedRun, EvalPrintsReportColumns) {
  const Outcome r = run(cmd_eval, EvalCommand{ckpt(), valid(), std::nullopt, 32, 10});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto nl = r.out.find('\n');
  EXPECT_EQ(r.out.substr(0, nl), metrics_header() + ",active_units,distinct_ratio");
  EXPECT_EQ(r.out.substr(nl + 1, 4), "2,12");
}

TEST_F(TrainedRun, EvalIsRepeatable) {
  const EvalCommand cmd{ckpt(), valid(), 9, 8, 10};
  EXPECT_EQ(run(cmd_eval, cmd).out, run(cmd_eval, cmd).out);
}

TEST_F(TrainedRun, EvalHandlesEmptyLines) {
  const fs::path corpus = *dir_ / "with_empty.txt";
  write_lines(corpus, {"the dog", "", "a cat"});
  EXPECT_EQ(run(cmd_eval, EvalCommand{ckpt(), corpus, std::nullopt, 32, 5}).code, kExitOk);
}

TEST_F(TrainedRun, EvalOfCorruptCheckpointIsALoadError) {
  std::string bytes = slurp(ckpt());
  bytes[bytes.size() - 9] ^= 1;
  const fs::path bad = *dir_ / "bad.ckpt";
  std::ofstream(bad, std::ios::binary) << bytes;
  const Outcome r = run(cmd_eval, EvalCommand{bad, valid(), std::nullopt, 32, 5});
  EXPECT_EQ(r.code, kExitIo);
  EXPECT_NE(r.err.find("checksum"), std::string::npos) << r.err;
}

TEST_F(TrainedRun, EvalOfEmptyCorpusIsAnInputError) {
  const fs::path empty = *dir_ / "empty.txt";
  std::ofstream{empty};
  EXPECT_EQ(run(cmd_eval, EvalCommand{ckpt(), empty, std::nullopt, 32, 5}).code, kExitIo);
}

TEST_F(TrainedRun, GenerateIsSeeded) {
  const fs::path a = *dir_ / "a.txt", b = *dir_ / "b.txt";
  const Outcome ra = run(cmd_generate, GenerateCommand{ckpt(), 10, 4, std::nullopt, a});
  ASSERT_EQ(ra.code, kExitOk);
  ASSERT_EQ(run(cmd_generate, GenerateCommand{ckpt(), 10, 4, std::nullopt, b}).code, kExitOk);
  EXPECT_TRUE(slurp(a) == slurp(b));
  EXPECT_EQ(read_lines(a).size(), 10u);
  EXPECT_EQ(ra.err.rfind("distinct_ratio=", 0), 0u) << ra.err;
}

TEST_F(TrainedRun, GenerateZeroSamplesWritesEmptyFile) {
  const fs::path out = *dir_ / "none.txt";
  ASSERT_EQ(run(cmd_generate, GenerateCommand{ckpt(), 0, 1, std::nullopt, out}).code, kExitOk);
  EXPECT_TRUE(fs::exists(out));
  EXPECT_EQ(fs::file_size(out), 0u);
}

TEST(CmdSweep, OneRunPerLambdaAndSummary) {
  const fs::path dir = scratch_dir();
  TrainingConfig c = config_in(dir);
  c.epochs = 1;
  c.out_dir = (dir / "sweep").string();
  const Outcome r = run(cmd_sweep_lambda, SweepCommand{c, {0.0, 0.2, 0.4}, true});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  for (const char* name : {"lambda_0", "lambda_0.2", "lambda_0.4"}) {
    EXPECT_TRUE(fs::exists(dir / "sweep" / name / "metrics.csv")) << name;
  }
  const auto lines = read_lines(dir / "sweep" / "sweep_summary.csv");
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "lambda,final_val_kl,final_val_rec,final_val_ppl");
  EXPECT_EQ(lines[2].substr(0, 4), "0.2,");
}

TEST(CmdSweep, EmptyLambdaListIsAUsageError) {
  TrainingConfig c = config_in(scratch_dir());
  EXPECT_EQ(run(cmd_sweep_lambda, SweepCommand{c, {}, true}).code, kExitConfig);
}

TEST(CmdSweep, FailedRunIsReportedAndTheSweepContinues) {
  const fs::path dir = scratch_dir();
  TrainingConfig c = config_in(dir);
  c.epochs = 1;
  c.out_dir = (dir / "sweep").string();
  const Outcome r = run(cmd_sweep_lambda, SweepCommand{c, {-1.0, 0.1}, true});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("lambda -1"), std::string::npos) << r.err;
  EXPECT_EQ(read_lines(dir / "sweep" / "sweep_summary.csv").size(), 2u);
}

TEST(CmdVerify, StricterTolerancesAreHonoured) {
  VerifyOptions o;
  o.tolerance_scale = 1e-9;
  const Outcome r = run(cmd_verify, o);
  EXPECT_EQ(r.code, kExitVerification);
  EXPECT_NE(r.out.find("FAIL"), std::string::npos);
}

TEST(CmdVerify, FlippedQuadraticTermBreaksNormalization) {
  VerifyOptions o;
  o.m_sign = -1.0;
  const Outcome r = run(cmd_verify, o);
  EXPECT_EQ(r.code, kExitVerification);
  std::istringstream lines(r.out);
  std::string line;
  bool normalization_failed = false;
  while (std::getline(lines, line)) {
    if (line.find("normalization") != std::string::npos) normalization_failed = line.rfind("FAIL", 0) == 0;
  }
  EXPECT_TRUE(normalization_failed) << r.out;
}

TEST(CmdSynthCorpus, WritesThreeSplits) {
  const fs::path dir = scratch_dir();
  ASSERT_EQ(run(cmd_synth_corpus, SynthCommand{dir, 200, 3}).code, kExitOk);
  EXPECT_EQ(read_lines(dir / "train.txt").size(), 200u);
  EXPECT_EQ(read_lines(dir / "valid.txt").size(), 20u);
  EXPECT_EQ(read_lines(dir / "test.txt").size(), 20u);
}

}  // namespace
}  // namespace cvlm
