#include <cstdlib>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace {

int cvlm(const std::string& args) {
  const std::string cmd = std::string(CVLM_BINARY) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, HelpSucceeds) { EXPECT_EQ(cvlm("--help"), 0); }

TEST(Cli, UsageErrorsExitWithConfigCode) {
  EXPECT_EQ(cvlm(""), 2);
  EXPECT_EQ(cvlm("frobnicate"), 2);
  EXPECT_EQ(cvlm("train --hidden-dim abc"), 2);
  EXPECT_EQ(cvlm("sweep-lambda --train_path x"), 2);
}

TEST(Cli, UnknownConfigKeysAreRejected) {
  const auto dir = cvlm::testing::scratch_dir();
  cvlm::testing::write_lines(dir / "run.cfg", {"# comment", "lambda=0.2", "hidden=3"});
  EXPECT_EQ(cvlm("train -c " + (dir / "run.cfg").string()), 2);
  EXPECT_EQ(cvlm("train --set nonsense=1"), 2);
}

TEST(Cli, MissingCheckpointIsAnIoError) {
  const auto dir = cvlm::testing::scratch_dir();
  cvlm::testing::write_lines(dir / "c.txt", {"a b"});
  EXPECT_EQ(cvlm("eval " + (dir / "none.ckpt").string() + " " + (dir / "c.txt").string()), 3);
}

TEST(Cli, FlagsOverrideTheConfigFile) {
  const auto dir = cvlm::testing::scratch_dir();
  cvlm::testing::write_lines(dir / "train.txt", cvlm::synthetic_corpus({40, 1}));
  cvlm::testing::write_lines(dir / "run.cfg",
                             {"train_path=" + (dir / "train.txt").string(),
                              "valid_path=" + (dir / "train.txt").string(), "out_dir=" + (dir / "run").string(),
                              "hidden_dim=6", "embed_dim=6", "latent_dim=2", "epochs=3", "batch_size=8"});
  ASSERT_EQ(cvlm("train -q -c " + (dir / "run.cfg").string() + " --epochs 1 --set lambda=0.25"), 0);
  const cvlm::TrainingConfig resolved = cvlm::parse_config_text(cvlm::testing::slurp(dir / "run" / "config.resolved"));
  EXPECT_EQ(resolved.epochs, 1);
  EXPECT_EQ(resolved.lambda, 0.25);
  EXPECT_EQ(resolved.hidden_dim, 6);
}

}  // namespace
