#include "mvdis/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace mvdis {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues values;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    values[key] = trim(line.substr(eq + 1));
  }
  return values;
}

KeyValues read_key_value_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

std::string format_key_values(const KeyValues& values) {
  std::string out;
  for (const auto& [k, v] : values) out += k + " = " + v + "\n";
  return out;
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  return v;
}

long long parse_int(const std::string& key, const std::string& text) {
  long long v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) items.push_back(item);
  }
  return items;
}

void apply_train_keys(const KeyValues& values, TrainConfig& config) {
  auto get = [&](const char* key) -> const std::string* {
    const auto it = values.find(key);
    return it == values.end() ? nullptr : &it->second;
  };
  if (auto v = get("epochs")) config.epochs = static_cast<int>(parse_int("epochs", *v));
  if (auto v = get("batch_size")) config.batch_size = static_cast<int>(parse_int("batch_size", *v));
  if (auto v = get("learning_rate")) config.learning_rate = parse_double("learning_rate", *v);
  if (auto v = get("weight_decay")) config.weight_decay = parse_double("weight_decay", *v);
  if (auto v = get("seed")) {
    const auto s = parse_int("seed", *v);
    if (s < 0) throw ConfigError("seed must be non-negative");
    config.seed = static_cast<std::uint64_t>(s);
  }
  if (auto v = get("hidden")) config.hidden = static_cast<Index>(parse_int("hidden", *v));
  if (auto v = get("calibration_batches")) {
    config.calibration_batches = static_cast<int>(parse_int("calibration_batches", *v));
  }
  if (auto v = get("gamma")) {
    if (*v == "auto") config.fixed_gamma.reset();
    else config.fixed_gamma = parse_double("gamma", *v);
  }
  if (auto v = get("precision")) {
    if (*v == "double" || *v == "float64") config.precision = Precision::float64;
    else if (*v == "float" || *v == "float32") config.precision = Precision::float32;
    else throw ConfigError("precision: expected double or float, got '" + *v + "'");
  }
  LossConfig& loss = config.loss;
  if (auto v = get("principle")) loss.principle = parse_principle(*v);
  if (auto v = get("objective")) loss.objective = parse_objective(*v);
  if (auto v = get("lambda")) loss.lambda = parse_double("lambda", *v);
  if (auto v = get("temperature")) loss.temperature = parse_double("temperature", *v);
  if (auto v = get("eps")) loss.eps = parse_double("eps", *v);
  if (auto v = get("vicreg_inv")) loss.vicreg.invariance = parse_double("vicreg_inv", *v);
  if (auto v = get("vicreg_var")) loss.vicreg.variance = parse_double("vicreg_var", *v);
  if (auto v = get("vicreg_cov")) loss.vicreg.covariance = parse_double("vicreg_cov", *v);
  if (auto v = get("vicreg_std_eps")) loss.vicreg.std_eps = parse_double("vicreg_std_eps", *v);
  if (auto v = get("w_sim")) loss.w_sim = parse_double("w_sim", *v);
  if (auto v = get("w_sep")) loss.w_sep = parse_double("w_sep", *v);
  if (auto v = get("symmetric_infonce")) loss.symmetric_infonce = parse_bool("symmetric_infonce", *v);
}

KeyValues train_config_snapshot(const TrainConfig& config) {
  KeyValues kv;
  kv["epochs"] = std::to_string(config.epochs);
  kv["batch_size"] = std::to_string(config.batch_size);
  kv["learning_rate"] = format_double(config.learning_rate);
  kv["weight_decay"] = format_double(config.weight_decay);
  kv["seed"] = std::to_string(config.seed);
  kv["hidden"] = std::to_string(config.hidden);
  kv["calibration_batches"] = std::to_string(config.calibration_batches);
  kv["gamma"] = config.fixed_gamma ? format_double(*config.fixed_gamma) : "auto";
  kv["precision"] = config.precision == Precision::float64 ? "double" : "float";
  const LossConfig& loss = config.loss;
  kv["principle"] = to_string(loss.principle);
  kv["objective"] = to_string(loss.objective);
  kv["lambda"] = format_double(loss.lambda);
  kv["temperature"] = format_double(loss.temperature);
  kv["eps"] = format_double(loss.eps);
  kv["vicreg_inv"] = format_double(loss.vicreg.invariance);
  kv["vicreg_var"] = format_double(loss.vicreg.variance);
  kv["vicreg_cov"] = format_double(loss.vicreg.covariance);
  kv["vicreg_std_eps"] = format_double(loss.vicreg.std_eps);
  kv["w_sim"] = format_double(loss.w_sim);
  kv["w_sep"] = format_double(loss.w_sep);
  kv["symmetric_infonce"] = loss.symmetric_infonce ? "true" : "false";
  kv["dis_weight"] = format_double(1.0 - loss.lambda);
  return kv;
}

}  // namespace mvdis
