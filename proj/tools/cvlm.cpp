// cvlm: train, evaluate and sample Gaussian-copula VAE language models.

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <cvlm/commands.hpp>
#include <cvlm/config.hpp>
#include <cvlm/errors.hpp>

namespace {

// One --key option per config key; values are applied after the config file.
struct ConfigOptions {
  std::string file;
  std::map<std::string, std::string> values;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", file, "key=value configuration file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "extra key=value override (repeatable)");
    for (const std::string& key : cvlm::config_keys()) {
      std::string dashed = key;
      for (char& ch : dashed) {
        if (ch == '_') ch = '-';
      }
      std::string names = "--" + key;
      if (dashed != key) names += ",--" + dashed;
      app->add_option(names, values[key], "override '" + key + "'")->group("Config overrides");
    }
  }

  cvlm::TrainingConfig resolve(CLI::App* app) const {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const std::string& key : cvlm::config_keys()) {
      if (app->count("--" + key) > 0) overrides.emplace_back(key, values.at(key));
    }
    for (const std::string& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw cvlm::ConfigError("--set expects key=value, got '" + kv + "'");
      overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
    }
    std::optional<std::filesystem::path> path;
    if (!file.empty()) path = file;
    return cvlm::resolve_config(path, overrides);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-copula variational autoencoder language model toolkit"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "train a model; writes metrics, checkpoints and config.resolved");
  ConfigOptions train_config;
  train_config.attach(train);
  std::string resume;
  bool quiet = false;
  train->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_flag("-q,--quiet", quiet, "no progress output");

  auto* eval = app.add_subcommand("eval", "print the evaluation report of a checkpoint on a corpus");
  cvlm::EvalCommand eval_cmd;
  std::uint64_t eval_seed = 0;
  eval->add_option("checkpoint", eval_cmd.checkpoint, "checkpoint file")->required();
  eval->add_option("corpus", eval_cmd.corpus, "one sentence per line")->required();
  eval->add_option("--seed", eval_seed, "noise seed (default: the training seed)");
  eval->add_option("--batch-size", eval_cmd.batch_size, "evaluation batch size");
  eval->add_option("--samples", eval_cmd.samples, "prior samples for distinct_ratio");

  auto* generate = app.add_subcommand("generate", "greedy-decode sentences from prior samples");
  cvlm::GenerateCommand gen_cmd;
  int gen_max_len = 0;
  std::string gen_output;
  generate->add_option("checkpoint", gen_cmd.checkpoint, "checkpoint file")->required();
  generate->add_option("-n,--count", gen_cmd.n, "number of sentences");
  generate->add_option("--seed", gen_cmd.seed, "sampling seed");
  generate->add_option("--max-len", gen_max_len, "maximum tokens per sentence (default: training max_len)");
  generate->add_option("-o,--output", gen_output, "output file (default: standard output)");

  auto* sweep = app.add_subcommand("sweep-lambda", "one training run per lambda plus sweep_summary.csv");
  ConfigOptions sweep_config;
  sweep_config.attach(sweep);
  std::vector<double> lambdas;
  bool sweep_quiet = false;
  sweep->add_option("--lambdas", lambdas, "copula weights, e.g. 0,0.2,0.4")->delimiter(',')->required();
  sweep->add_flag("-q,--quiet", sweep_quiet, "no progress output");

  auto* verify = app.add_subcommand("verify", "run the oracle suite and print a pass/fail table");
  cvlm::VerifyOptions verify_opts;
  bool flip_m_sign = false;
  verify->add_option("--tolerance-scale", verify_opts.tolerance_scale, "multiply every tolerance (< 1 is stricter)")
      ->check(CLI::PositiveNumber);
  verify->add_option("--seed", verify_opts.seed, "seed for random instances");
  verify->add_flag("--flip-m-sign", flip_m_sign, "debug: corrupt the copula density quadratic term");

  auto* synth = app.add_subcommand("synth-corpus", "write a templated synthetic corpus (train/valid/test)");
  cvlm::SynthCommand synth_cmd;
  synth->add_option("out_dir", synth_cmd.out_dir, "output directory")->required();
  synth->add_option("--sentences", synth_cmd.sentences, "training sentences");
  synth->add_option("--seed", synth_cmd.seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : cvlm::kExitConfig;
  }

  try {
    if (*train) {
      cvlm::TrainCommand cmd{train_config.resolve(train), std::nullopt, quiet};
      if (!resume.empty()) cmd.resume_from = resume;
      return cvlm::cmd_train(cmd, std::cout, std::cerr);
    }
    if (*eval) {
      if (eval->count("--seed") > 0) eval_cmd.seed = eval_seed;
      return cvlm::cmd_eval(eval_cmd, std::cout, std::cerr);
    }
    if (*generate) {
      if (generate->count("--max-len") > 0) gen_cmd.max_len = gen_max_len;
      if (!gen_output.empty()) gen_cmd.output = gen_output;
      return cvlm::cmd_generate(gen_cmd, std::cout, std::cerr);
    }
    if (*sweep) {
      return cvlm::cmd_sweep_lambda({sweep_config.resolve(sweep), lambdas, sweep_quiet}, std::cout, std::cerr);
    }
    if (*verify) {
      if (flip_m_sign) verify_opts.m_sign = -1.0;
      return cvlm::cmd_verify(verify_opts, std::cout, std::cerr);
    }
    if (*synth) return cvlm::cmd_synth_corpus(synth_cmd, std::cout, std::cerr);
  } catch (...) {
    return cvlm::report_exception(std::cerr);
  }
  return cvlm::kExitFailure;
}
