#ifndef CVLM_CONFIG_HPP
#define CVLM_CONFIG_HPP

// Run configuration and its flat `key=value` text form.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <cvlm/batch_objective.hpp>
#include <cvlm/model.hpp>

namespace cvlm {

struct TrainingConfig {
  ObjectiveMode mode = ObjectiveMode::kCopula;
  double lambda = 0.0;
  int latent_dim = 32;
  int hidden_dim = 200;
  int embed_dim = 200;
  int vocab_max = 10000;
  int max_len = 100;
  int batch_size = 32;
  int epochs = 30;
  double lr = 1e-3;
  double dropout = 0.5;
  /// Linear KL warmup length in optimizer steps; negative picks ten epochs.
  std::int64_t anneal_warmup_steps = -1;
  std::uint64_t seed = 1;
  /// Wall-clock columns are written as 0 so logs are reproducible byte for byte.
  bool deterministic = true;
  std::string train_path;
  std::string valid_path;
  std::string test_path;
  std::string out_dir = "run";
  /// Use one noise draw for both z and q.
  bool shared_noise = false;
  bool anneal_copula = false;
  bool scalar_w = false;

  double anneal_start = 0.0;
  int log_interval = 100;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 5.0;
  /// Finite-difference gate before the first epoch.
  bool grad_check = true;
  double active_threshold = 0.01;
};

/// Every key accepted in a configuration file, in canonical order.
const std::vector<std::string>& config_keys();

/// Applies `key=value` to `config`; ConfigError for unknown keys or bad values.
void set_config_value(TrainingConfig& config, std::string_view key, std::string_view value);

/// Applies a whole file body: one `key=value` per line, blank lines and
/// `#` comment lines ignored.
void apply_config_text(TrainingConfig& config, std::string_view text);
TrainingConfig parse_config_text(std::string_view text);

/// Canonical text listing every key; parsing it reproduces `config` exactly.
std::string to_config_text(const TrainingConfig& config);

/// Range checks on numeric fields (paths are checked by the commands using them).
void validate(const TrainingConfig& config);

ModelConfig model_config(const TrainingConfig& config, int vocab_size);
ObjectiveOptions objective_options(const TrainingConfig& config, double anneal_w);

bool operator==(const TrainingConfig& a, const TrainingConfig& b);

}  // namespace cvlm

#endif  // CVLM_CONFIG_HPP
