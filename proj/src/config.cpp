#include "mlfsc/config.hpp"

#include "mlfsc/error.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace mlfsc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ConfigError("bad value '" + value + "' for " + key);
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no") return false;
  throw ConfigError("bad boolean '" + value + "' for " + key);
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

std::string_view to_string(Mode mode) { return mode == Mode::raw ? "raw" : "mlfsc"; }

Mode mode_from_string(std::string_view name) {
  if (name == "raw" || name == "raw-baseline") return Mode::raw;
  if (name == "mlfsc") return Mode::mlfsc;
  throw ConfigError("unknown mode '" + std::string(name) + "' (raw or mlfsc)");
}

int RunConfig::resolved_patch_size() const {
  return patch_size.value_or(mode == Mode::raw ? 16 : 8);
}
int RunConfig::resolved_stride() const { return stride.value_or(mode == Mode::raw ? 4 : 2); }
int RunConfig::resolved_n_atoms() const { return n_atoms.value_or(mode == Mode::raw ? 200 : 5); }
bool RunConfig::resolved_subtract_mean() const {
  return subtract_mean.value_or(mode == Mode::raw);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "mode") mode = mode_from_string(value);
  else if (key == "resize") resize = parse_number<int>(key, value);
  else if (key == "grayscale") grayscale = parse_bool(key, value);
  else if (key == "patch_size") patch_size = parse_number<int>(key, value);
  else if (key == "stride") stride = parse_number<int>(key, value);
  else if (key == "n_atoms") n_atoms = parse_number<int>(key, value);
  else if (key == "subtract_mean") subtract_mean = parse_bool(key, value);
  else if (key == "alpha") alpha = parse_number<double>(key, value);
  else if (key == "k") k = parse_number<int>(key, value);
  else if (key == "taps") {
    taps.clear();
    std::stringstream ss(value);
    for (std::string t; std::getline(ss, t, ',');) {
      t = trim(t);
      try {
        tap_from_string(t);
      } catch (const Error& e) {
        throw ConfigError(e.what());
      }
      taps.push_back(t);
    }
  } else if (key == "aggregation") aggregation = aggregation_from_string(value);
  else if (key == "single_tap") single_tap = value;
  else if (key == "error_norm") error_norm = error_norm_from_string(value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "weights") weights = value;
  else if (key == "epochs") epochs = parse_number<int>(key, value);
  else if (key == "batch_size") batch_size = parse_number<int>(key, value);
  else if (key == "tol") tol = parse_number<double>(key, value);
  else if (key == "max_train_patches") max_train_patches = parse_number<long>(key, value);
  else if (key == "train_budget_mb") train_budget_mb = parse_number<long>(key, value);
  else if (key == "jobs") jobs = parse_number<int>(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

void RunConfig::validate() const {
  if (resize < 8) throw ConfigError("resize must be >= 8");
  if (mode == Mode::mlfsc && resize % 8 != 0)
    throw ConfigError("resize must be divisible by 8 in mlfsc mode");
  if (resolved_patch_size() < 1 || resolved_stride() < 1 || resolved_n_atoms() < 1)
    throw ConfigError("patch_size, stride and n_atoms must be positive");
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be >= 0");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (mode == Mode::mlfsc && taps.empty()) throw ConfigError("taps must not be empty");
  if (aggregation == Aggregation::single_layer &&
      std::find(taps.begin(), taps.end(), single_tap) == taps.end())
    throw ConfigError("single_tap " + single_tap + " is not among the taps");
  if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be positive");
  if (max_train_patches < 1 || train_budget_mb < 1)
    throw ConfigError("max_train_patches and train_budget_mb must be positive");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
}

TrainConfig RunConfig::train_config(std::uint64_t layer_seed) const {
  TrainConfig t;
  t.n_atoms = resolved_n_atoms();
  t.alpha = alpha;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.seed = layer_seed;
  t.tol = tol;
  t.jobs = jobs;
  return t;
}

ScoringOptions RunConfig::scoring_options() const {
  ScoringOptions o;
  o.alpha = alpha;
  o.k = k;
  o.norm = error_norm;
  o.aggregation = aggregation;
  o.single_tap = single_tap;
  o.taps = taps;
  o.jobs = jobs;
  return o;
}

const std::vector<std::string>& RunConfig::extraction_keys() {
  static const std::vector<std::string> keys{"mode",   "resize",        "grayscale",
                                             "patch_size", "stride",    "subtract_mean",
                                             "taps",   "n_atoms"};
  return keys;
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::string tap_list;
  for (const auto& t : taps) tap_list += (tap_list.empty() ? "" : ",") + t;
  return {{"mode", std::string(to_string(mode))},
          {"resize", std::to_string(resize)},
          {"grayscale", grayscale ? "true" : "false"},
          {"patch_size", std::to_string(resolved_patch_size())},
          {"stride", std::to_string(resolved_stride())},
          {"n_atoms", std::to_string(resolved_n_atoms())},
          {"subtract_mean", resolved_subtract_mean() ? "true" : "false"},
          {"alpha", format_double(alpha)},
          {"k", std::to_string(k)},
          {"taps", tap_list},
          {"aggregation", std::string(to_string(aggregation))},
          {"single_tap", single_tap},
          {"error_norm", std::string(to_string(error_norm))},
          {"seed", std::to_string(seed)},
          {"weights", weights},
          {"epochs", std::to_string(epochs)},
          {"batch_size", std::to_string(batch_size)},
          {"tol", format_double(tol)},
          {"max_train_patches", std::to_string(max_train_patches)},
          {"train_budget_mb", std::to_string(train_budget_mb)},
          {"jobs", std::to_string(jobs)}};
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [key, value] : to_map()) out += key + " = " + value + "\n";
  return out;
}

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  for (const auto& [key, value] : parse_key_values(text)) base.set(key, value);
  return base;
}

RunConfig load_config(const std::string& path, RunConfig base) {
  for (const auto& [key, value] : load_key_values(path)) base.set(key, value);
  return base;
}

}  // namespace mlfsc
