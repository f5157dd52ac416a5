#include <cvlm/config.hpp>

#include <charconv>
#include <cmath>
#include <functional>
#include <string>

#include <cvlm/errors.hpp>

namespace cvlm {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, const char* expected) {
  throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(value) + "' as " + expected);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value, const char* expected) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) bad_value(key, value, expected);
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "a boolean (true/false)");
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  std::string key;
  std::function<std::string(const TrainingConfig&)> get;
  std::function<void(TrainingConfig&, std::string_view)> set;
};

template <typename T>
Field integer_field(std::string key, T TrainingConfig::*member) {
  return {key, [member](const TrainingConfig& c) { return std::to_string(c.*member); },
          [member, key](TrainingConfig& c, std::string_view v) { c.*member = parse_number<T>(key, v, "an integer"); }};
}

Field double_field(std::string key, double TrainingConfig::*member) {
  return {key, [member](const TrainingConfig& c) { return format_double(c.*member); },
          [member, key](TrainingConfig& c, std::string_view v) {
            const double x = parse_number<double>(key, v, "a number");
            if (!std::isfinite(x)) bad_value(key, v, "a finite number");
            c.*member = x;
          }};
}

Field bool_field(std::string key, bool TrainingConfig::*member) {
  return {key, [member](const TrainingConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member, key](TrainingConfig& c, std::string_view v) { c.*member = parse_bool(key, v); }};
}

Field string_field(std::string key, std::string TrainingConfig::*member) {
  return {key, [member](const TrainingConfig& c) { return c.*member; },
          [member](TrainingConfig& c, std::string_view v) { c.*member = std::string(v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"mode", [](const TrainingConfig& c) { return std::string(to_string(c.mode)); },
       [](TrainingConfig& c, std::string_view v) { c.mode = objective_mode_from_string(v); }},
      double_field("lambda", &TrainingConfig::lambda),
      integer_field("latent_dim", &TrainingConfig::latent_dim),
      integer_field("hidden_dim", &TrainingConfig::hidden_dim),
      integer_field("embed_dim", &TrainingConfig::embed_dim),
      integer_field("vocab_max", &TrainingConfig::vocab_max),
      integer_field("max_len", &TrainingConfig::max_len),
      integer_field("batch_size", &TrainingConfig::batch_size),
      integer_field("epochs", &TrainingConfig::epochs),
      double_field("lr", &TrainingConfig::lr),
      double_field("dropout", &TrainingConfig::dropout),
      integer_field("anneal_warmup_steps", &TrainingConfig::anneal_warmup_steps),
      integer_field("seed", &TrainingConfig::seed),
      bool_field("deterministic", &TrainingConfig::deterministic),
      string_field("train_path", &TrainingConfig::train_path),
      string_field("valid_path", &TrainingConfig::valid_path),
      string_field("test_path", &TrainingConfig::test_path),
      string_field("out_dir", &TrainingConfig::out_dir),
      bool_field("shared_noise", &TrainingConfig::shared_noise),
      bool_field("anneal_copula", &TrainingConfig::anneal_copula),
      bool_field("scalar_w", &TrainingConfig::scalar_w),
      double_field("anneal_start", &TrainingConfig::anneal_start),
      integer_field("log_interval", &TrainingConfig::log_interval),
      double_field("grad_clip", &TrainingConfig::grad_clip),
      bool_field("grad_check", &TrainingConfig::grad_check),
      double_field("active_threshold", &TrainingConfig::active_threshold),
  };
  return table;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> out;
    for (const Field& f : fields()) out.push_back(f.key);
    return out;
  }();
  return keys;
}

void set_config_value(TrainingConfig& config, std::string_view key, std::string_view value) {
  for (const Field& f : fields()) {
    if (f.key == key) {
      f.set(config, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

void apply_config_text(TrainingConfig& config, std::string_view text) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view raw = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    set_config_value(config, trim(line.substr(0, eq)), line.substr(eq + 1));
  }
}

TrainingConfig parse_config_text(std::string_view text) {
  TrainingConfig config;
  apply_config_text(config, text);
  return config;
}

std::string to_config_text(const TrainingConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += f.key + "=" + f.get(config) + "\n";
  return out;
}

void validate(const TrainingConfig& c) {
  auto require = [](bool ok, const char* key, const char* rule) {
    if (!ok) throw ConfigError(std::string("config key '") + key + "' " + rule);
  };
  require(c.lambda >= 0.0, "lambda", "must be >= 0");
  require(c.latent_dim >= 1, "latent_dim", "must be >= 1");
  require(c.hidden_dim >= 1, "hidden_dim", "must be >= 1");
  require(c.embed_dim >= 1, "embed_dim", "must be >= 1");
  require(c.vocab_max > kNumReserved, "vocab_max", "must exceed the 4 reserved tokens");
  require(c.max_len >= 2, "max_len", "must be >= 2");
  require(c.batch_size >= 1, "batch_size", "must be >= 1");
  require(c.epochs >= 1, "epochs", "must be >= 1");
  require(c.lr > 0.0, "lr", "must be > 0");
  require(c.dropout >= 0.0 && c.dropout < 1.0, "dropout", "must be in [0, 1)");
  require(c.anneal_start >= 0.0 && c.anneal_start <= 1.0, "anneal_start", "must be in [0, 1]");
  require(c.log_interval >= 1, "log_interval", "must be >= 1");
  require(c.grad_clip >= 0.0, "grad_clip", "must be >= 0");
  require(c.active_threshold >= 0.0, "active_threshold", "must be >= 0");
}

ModelConfig model_config(const TrainingConfig& config, int vocab_size) {
  ModelConfig m;
  m.vocab_size = vocab_size;
  m.embed_dim = config.embed_dim;
  m.hidden_dim = config.hidden_dim;
  m.latent_dim = config.latent_dim;
  m.dropout = config.dropout;
  m.scalar_w = config.scalar_w;
  return m;
}

ObjectiveOptions objective_options(const TrainingConfig& config, double anneal_w) {
  ObjectiveOptions o;
  o.mode = config.mode;
  o.lambda = config.lambda;
  o.anneal_w = anneal_w;
  o.anneal_copula = config.anneal_copula;
  return o;
}

bool operator==(const TrainingConfig& a, const TrainingConfig& b) { return to_config_text(a) == to_config_text(b); }

}  // namespace cvlm
