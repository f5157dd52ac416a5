#ifndef CVLM_COMMANDS_HPP
#define CVLM_COMMANDS_HPP

// Workflows behind the command-line subcommands. Each returns a process exit
// code and reports problems on `err` instead of throwing.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <cvlm/config.hpp>
#include <cvlm/verify.hpp>

namespace cvlm {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitConfig = 2,
  kExitIo = 3,
  kExitNumeric = 4,
  kExitVerification = 5,
};

/// Maps the exception in flight to an exit code and prints its message.
int report_exception(std::ostream& err);

/// Reads `path` (when given), then applies `overrides` in order.
TrainingConfig resolve_config(const std::optional<std::filesystem::path>& path,
                              const std::vector<std::pair<std::string, std::string>>& overrides);

struct TrainCommand {
  TrainingConfig config;
  std::optional<std::filesystem::path> resume_from;
  bool quiet = false;
};
int cmd_train(const TrainCommand& command, std::ostream& out, std::ostream& err);

struct EvalCommand {
  std::filesystem::path checkpoint;
  std::filesystem::path corpus;
  std::optional<std::uint64_t> seed;
  int batch_size = 32;
  /// Prior samples behind distinct_ratio.
  int samples = 50;
};
int cmd_eval(const EvalCommand& command, std::ostream& out, std::ostream& err);

struct GenerateCommand {
  std::filesystem::path checkpoint;
  int n = 10;
  std::uint64_t seed = 1;
  std::optional<int> max_len;
  /// Standard output when empty.
  std::optional<std::filesystem::path> output;
};
int cmd_generate(const GenerateCommand& command, std::ostream& out, std::ostream& err);

struct SweepCommand {
  TrainingConfig config;
  std::vector<double> lambdas;
  bool quiet = false;
};
int cmd_sweep_lambda(const SweepCommand& command, std::ostream& out, std::ostream& err);

int cmd_verify(const VerifyOptions& options, std::ostream& out, std::ostream& err);

struct SynthCommand {
  std::filesystem::path out_dir;
  std::size_t sentences = 5000;
  std::uint64_t seed = 1;
};
/// Writes train.txt, valid.txt and test.txt from the templated generator
/// (validation and test hold a tenth of the training size each).
int cmd_synth_corpus(const SynthCommand& command, std::ostream& out, std::ostream& err);

/// Directory name of one sweep run, e.g. "lambda_0.4".
std::string sweep_run_name(double lambda);

}  // namespace cvlm

#endif  // CVLM_COMMANDS_HPP
