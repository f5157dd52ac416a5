#include <cvlm/commands.hpp>

#include <charconv>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <cvlm/errors.hpp>
#include <cvlm/evaluation.hpp>
#include <cvlm/trainer.hpp>

namespace cvlm {
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("short write to " + path.string());
}

void require_path(const std::string& value, const char* key) {
  if (value.empty()) throw ConfigError(std::string("config key '") + key + "' is required");
}

std::vector<std::string> read_corpus(const std::string& path, const char* key) {
  std::vector<std::string> lines = read_lines(path);
  if (lines.empty()) throw InputError(std::string("corpus '") + path + "' (" + key + ") is empty");
  return lines;
}

std::vector<std::string> decode_all(const std::vector<TokenIds>& samples, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(samples.size());
  for (const TokenIds& ids : samples) out.push_back(decode_ids(ids, vocab));
  return out;
}

// Trains one configuration with the standard on-disk layout; returns the final
// validation report.
TrainResult run_training(const TrainingConfig& config, const std::optional<fs::path>& resume, bool quiet,
                         std::ostream& out) {
  validate(config);
  require_path(config.train_path, "train_path");
  require_path(config.valid_path, "valid_path");
  require_path(config.out_dir, "out_dir");
  const fs::path out_dir = config.out_dir;
  fs::create_directories(out_dir);
  write_file(out_dir / "config.resolved", to_config_text(config));

  const std::vector<std::string> train_lines = read_corpus(config.train_path, "train_path");
  const std::vector<std::string> valid_lines = read_corpus(config.valid_path, "valid_path");
  TrainOptions options;
  options.out_dir = out_dir;
  options.resume_from = resume;
  options.log = quiet ? nullptr : &out;
  return train(config, train_lines, valid_lines, options);
}

}  // namespace

int report_exception(std::ostream& err) {
  try {
    throw;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    err << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kExitIo;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << '\n';
    return kExitIo;
  } catch (const VerificationError& e) {
    err << "verification failed: " << e.what() << '\n';
    return kExitVerification;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const FactorizationError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const DomainError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const fs::filesystem_error& e) {
    err << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
}

TrainingConfig resolve_config(const std::optional<fs::path>& path,
                              const std::vector<std::pair<std::string, std::string>>& overrides) {
  TrainingConfig config;
  if (path) apply_config_text(config, read_file(*path));
  for (const auto& [key, value] : overrides) set_config_value(config, key, value);
  return config;
}

int cmd_train(const TrainCommand& command, std::ostream& out, std::ostream& err) {
  try {
    const TrainResult result = run_training(command.config, command.resume_from, command.quiet, out);
    if (!command.quiet) {
      out << "done: valid rec_nll " << fmt(result.final_valid.rec_nll) << " kl " << fmt(result.final_valid.kl)
          << " ppl " << fmt(result.final_valid.ppl) << '\n';
    }
    return kExitOk;
  } catch (...) {
    return report_exception(err);
  }
}

int cmd_eval(const EvalCommand& command, std::ostream& out, std::ostream& err) {
  try {
    if (command.batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (command.samples < 0) throw ConfigError("sample count must be >= 0");
    Checkpoint ckpt = load_checkpoint(command.checkpoint);
    const std::vector<std::string> lines = read_corpus(command.corpus.string(), "corpus");
    const auto max_len = static_cast<std::size_t>(ckpt.config.max_len);
    const std::vector<TokenIds> ids = encode_corpus(lines, ckpt.vocab, max_len);

    EvalOptions options;
    options.objective = objective_options(ckpt.config, 1.0);
    options.seed = command.seed.value_or(ckpt.config.seed);
    options.batch_size = static_cast<std::size_t>(command.batch_size);
    EvalReport report = evaluate(ckpt.params, ids, options);
    report.active_units = active_units(ckpt.params, ids, ckpt.config.active_threshold);
    const auto samples =
        sample_from_prior(ckpt.params, static_cast<std::size_t>(command.samples), options.seed, max_len);
    const std::vector<std::string> sentences = decode_all(samples, ckpt.vocab);
    report.distinct_ratio = distinct_ratio(sentences);

    const MetricsRow row =
        metrics_row(report, ckpt.progress.epochs_completed, ckpt.progress.global_step, "eval", 1.0);
    out << eval_header() << '\n' << format_eval_row(row, report.active_units, report.distinct_ratio) << '\n';
    return kExitOk;
  } catch (...) {
    return report_exception(err);
  }
}

int cmd_generate(const GenerateCommand& command, std::ostream& out, std::ostream& err) {
  try {
    if (command.n < 0) throw ConfigError("sample count must be >= 0");
    Checkpoint ckpt = load_checkpoint(command.checkpoint);
    const int max_len = command.max_len.value_or(ckpt.config.max_len);
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
    const auto samples =
        sample_from_prior(ckpt.params, static_cast<std::size_t>(command.n), command.seed, static_cast<std::size_t>(max_len));
    const std::vector<std::string> sentences = decode_all(samples, ckpt.vocab);
    std::string text;
    for (const std::string& s : sentences) text += s + '\n';
    if (command.output) {
      write_file(*command.output, text);
    } else {
      out << text;
    }
    err << "distinct_ratio=" << fmt(distinct_ratio(sentences)) << '\n';
    return kExitOk;
  } catch (...) {
    return report_exception(err);
  }
}

std::string sweep_run_name(double lambda) { return "lambda_" + fmt(lambda); }

int cmd_sweep_lambda(const SweepCommand& command, std::ostream& out, std::ostream& err) {
  int status = kExitOk;
  try {
    if (command.lambdas.empty()) throw ConfigError("sweep-lambda needs at least one lambda");
    validate(command.config);
    require_path(command.config.out_dir, "out_dir");
    const fs::path root = command.config.out_dir;
    fs::create_directories(root);
    write_file(root / "config.resolved", to_config_text(command.config));

    std::string summary = "lambda,final_val_kl,final_val_rec,final_val_ppl\n";
    for (double lambda : command.lambdas) {
      TrainingConfig config = command.config;
      config.lambda = lambda;
      config.out_dir = (root / sweep_run_name(lambda)).string();
      if (!command.quiet) out << "== lambda " << fmt(lambda) << " -> " << config.out_dir << '\n';
      try {
        const TrainResult result = run_training(config, std::nullopt, command.quiet, out);
        summary += fmt(lambda) + "," + fmt(result.final_valid.kl) + "," + fmt(result.final_valid.rec_nll) + "," +
                   fmt(result.final_valid.ppl) + "\n";
      } catch (...) {
        const int code = report_exception(err);
        err << "run with lambda " << fmt(lambda) << " failed (exit " << code << ")\n";
        if (status == kExitOk) status = code;
      }
      write_file(root / "sweep_summary.csv", summary);
    }
    return status;
  } catch (...) {
    return report_exception(err);
  }
}

int cmd_verify(const VerifyOptions& options, std::ostream& out, std::ostream& err) {
  try {
    const std::vector<CheckResult> results = run_verification(options);
    std::size_t width = 0;
    for (const auto& r : results) width = std::max(width, r.name.size());
    int failed = 0;
    for (const auto& r : results) {
      out << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(static_cast<int>(width)) << r.name
          << "  worst " << fmt(r.worst) << " (limit " << fmt(r.threshold) << ")  " << r.detail << '\n';
      if (!r.passed) ++failed;
    }
    if (failed > 0) {
      err << failed << " check(s) failed:";
      for (const auto& r : results) {
        if (!r.passed) err << ' ' << '[' << r.name << ']';
      }
      err << '\n';
      return kExitVerification;
    }
    return kExitOk;
  } catch (...) {
    return report_exception(err);
  }
}

int cmd_synth_corpus(const SynthCommand& command, std::ostream& out, std::ostream& err) {
  try {
    if (command.sentences < 10) throw ConfigError("synthetic corpus needs at least 10 sentences");
    fs::create_directories(command.out_dir);
    auto emit = [&](const char* name, std::size_t n, std::uint64_t seed) {
      std::string text;
      for (const std::string& line : synthetic_corpus({n, seed})) text += line + '\n';
      write_file(command.out_dir / name, text);
      out << (command.out_dir / name).string() << ": " << n << " sentences\n";
    };
    emit("train.txt", command.sentences, command.seed);
    emit("valid.txt", command.sentences / 10, command.seed + 1000003);
    emit("test.txt", command.sentences / 10, command.seed + 2000003);
    return kExitOk;
  } catch (...) {
    return report_exception(err);
  }
}

}  // namespace cvlm
