#pragma once

// Flat `key = value` configuration files (one pair per line, `#` comments)
// and their mapping onto the training, probe and sweep structs.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mvdis/training.hpp"

namespace mvdis {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_value_file(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& values);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);
double parse_double(const std::string& key, const std::string& text);
long long parse_int(const std::string& key, const std::string& text);
bool parse_bool(const std::string& key, const std::string& text);
std::vector<std::string> split_list(const std::string& text);

/// Applies recognised keys onto `config`; unknown keys are ignored so one
/// file can carry sweep and probe settings as well. Throws ConfigError on
/// malformed values.
void apply_train_keys(const KeyValues& values, TrainConfig& config);
/// Every effective training value, enough to reproduce a run.
KeyValues train_config_snapshot(const TrainConfig& config);

}  // namespace mvdis
