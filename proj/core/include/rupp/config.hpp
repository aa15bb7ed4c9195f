#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rupp/data.hpp"
#include "rupp/model.hpp"
#include "rupp/trainer.hpp"

namespace rupp {

/// Everything a run needs, addressable by dotted keys: model.*, train.*,
/// schedule.*, loss.* and data.*.
struct RunConfig {
  ResUnetPPConfig model;
  TrainConfig train;
  DataConfig data;

  void validate() const;
};

using Setting = std::pair<std::string, std::string>;

// `key = value` lines; `#` starts a comment; blank lines ignored.
// Throws ConfigError naming `source` and the line number.
std::vector<Setting> parse_config_text(std::string_view text, const std::string& source = "<config>");
std::vector<Setting> read_config_file(const std::filesystem::path& path);

// Throws ConfigError for unknown keys or unparsable values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
void apply_settings(RunConfig& cfg, const std::vector<Setting>& settings);
std::string get_setting(const RunConfig& cfg, const std::string& key);

std::vector<std::string> config_keys();

// Every key with its resolved value, one `key = value` line each, in registry order.
std::string format_config(const RunConfig& cfg);

}  // namespace rupp
