#include "rupp/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "rupp/error.hpp"

namespace rupp {

void RunConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return d;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_size(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

std::string num(double d) {
  // Shortest text that parses back to the same double.
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, res.ptr);
}

std::string list(const std::vector<std::size_t>& v) {
  std::string out;
  for (auto x : v) out += (out.empty() ? "" : ",") + std::to_string(x);
  return out;
}

struct Entry {
  std::string key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define RUPP_SIZE(name, field)                                                                   \
  Entry {                                                                                        \
    name, [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_size(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                               \
  }
#define RUPP_U64(name, field)                                                                   \
  Entry {                                                                                       \
    name, [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_u64(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }                              \
  }
#define RUPP_DOUBLE(name, field)                                                                    \
  Entry {                                                                                           \
    name, [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }, \
        [](const RunConfig& c) { return num(c.field); }                                             \
  }
#define RUPP_BOOL(name, field)                                                                    \
  Entry {                                                                                         \
    name, [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_bool(k, v); }, \
        [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }                \
  }

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries{
      RUPP_SIZE("model.input_channels", model.input_channels),
      RUPP_SIZE("model.base_channels", model.base_channels),
      RUPP_SIZE("model.depth", model.depth),
      RUPP_SIZE("model.input_height", model.input_height),
      RUPP_SIZE("model.input_width", model.input_width),
      Entry{"model.aspp_dilations",
            [](RunConfig& c, const std::string& k, const std::string& v) { c.model.aspp_dilations = to_size_list(k, v); },
            [](const RunConfig& c) { return list(c.model.aspp_dilations); }},
      RUPP_U64("model.seed", model.seed),
      RUPP_DOUBLE("model.threshold", model.threshold),

      RUPP_SIZE("train.epochs", train.epochs),
      RUPP_SIZE("train.batch_size", train.batch_size),
      Entry{"train.optimizer",
            [](RunConfig& c, const std::string&, const std::string& v) { c.train.optimizer = parse_optimizer_kind(v); },
            [](const RunConfig& c) { return std::string(to_string(c.train.optimizer)); }},
      RUPP_DOUBLE("train.initial_lr", train.initial_lr),
      RUPP_DOUBLE("train.beta1", train.beta1),
      RUPP_DOUBLE("train.beta2", train.beta2),
      RUPP_DOUBLE("train.adam_eps", train.adam_eps),
      RUPP_SIZE("train.early_stop_patience", train.early_stop_patience),
      RUPP_DOUBLE("train.min_delta", train.min_delta),
      RUPP_U64("train.seed", train.seed),
      RUPP_BOOL("train.log_wall_time", train.log_wall_time),

      RUPP_DOUBLE("schedule.decay_factor", train.decay_factor),
      RUPP_SIZE("schedule.cycle_length_epochs", train.cycle_length_epochs),
      RUPP_SIZE("schedule.plateau_patience", train.plateau_patience),
      RUPP_DOUBLE("schedule.plateau_factor", train.plateau_factor),
      RUPP_DOUBLE("schedule.min_lr", train.min_lr),

      RUPP_DOUBLE("loss.smooth_eps", train.loss.smooth_eps),
      RUPP_DOUBLE("loss.binarize_threshold", train.loss.binarize_threshold),
      RUPP_BOOL("loss.per_sample", train.loss.per_sample),

      RUPP_U64("data.split_seed", data.split_seed),
      RUPP_DOUBLE("data.train_ratio", data.train_ratio),
      RUPP_DOUBLE("data.val_ratio", data.val_ratio),
      RUPP_DOUBLE("data.test_ratio", data.test_ratio),
      Entry{"data.standardize",
            [](RunConfig& c, const std::string&, const std::string& v) { c.data.standardize = parse_standardize_mode(v); },
            [](const RunConfig& c) { return std::string(to_string(c.data.standardize)); }},
  };
  return entries;
}

#undef RUPP_SIZE
#undef RUPP_U64
#undef RUPP_DOUBLE
#undef RUPP_BOOL

const Entry& find_entry(const std::string& key) {
  for (const auto& e : registry()) {
    if (e.key == key) return e;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::vector<Setting> parse_config_text(std::string_view text, const std::string& source) {
  std::vector<Setting> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(std::string_view(body).substr(0, eq));
    std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(line_no) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::vector<Setting> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const Entry& e = find_entry(key);
  e.set(cfg, key, value);
}

void apply_settings(RunConfig& cfg, const std::vector<Setting>& settings) {
  for (const auto& [k, v] : settings) apply_setting(cfg, k, v);
}

std::string get_setting(const RunConfig& cfg, const std::string& key) { return find_entry(key).get(cfg); }

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : registry()) keys.push_back(e.key);
  return keys;
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& e : registry()) out += e.key + " = " + e.get(cfg) + "\n";
  return out;
}

}  // namespace rupp
