#pragma once

#include "mlfsc/dictionary.hpp"
#include "mlfsc/scoring.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mlfsc {

enum class Mode { raw, mlfsc };

std::string_view to_string(Mode mode);
Mode mode_from_string(std::string_view name);

// Every knob of a train/score run. Mode-dependent extraction defaults
// (patch size, stride, atom count, mean subtraction) stay unset until
// resolved so a config file can leave them to the mode.
struct RunConfig {
  Mode mode = Mode::mlfsc;
  int resize = 224;
  bool grayscale = true;  // raw mode only
  std::optional<int> patch_size;
  std::optional<int> stride;
  std::optional<int> n_atoms;
  std::optional<bool> subtract_mean;
  double alpha = 1.0;
  int k = 5;
  std::vector<std::string> taps{"conv4", "conv7", "conv10"};
  Aggregation aggregation = Aggregation::z_sum;
  std::string single_tap = "conv10";
  ErrorNorm error_norm = ErrorNorm::l2;
  std::uint64_t seed = 0;
  std::string weights;
  int epochs = 15;
  int batch_size = 512;
  double tol = 1e-4;
  long max_train_patches = 100'000;
  long train_budget_mb = 1024;  // per-layer cap on pooled training patches
  int jobs = 1;

  // 16/4/200/on for raw, 8/2/5/off for mlfsc unless set explicitly.
  int resolved_patch_size() const;
  int resolved_stride() const;
  int resolved_n_atoms() const;
  bool resolved_subtract_mean() const;

  // Throws ConfigError on unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  TrainConfig train_config(std::uint64_t layer_seed) const;
  ScoringOptions scoring_options() const;

  // Keys that change how patches are extracted; a bundle and a scoring run
  // must agree on all of them.
  static const std::vector<std::string>& extraction_keys();

  // Resolved key=value lines in a fixed order.
  std::map<std::string, std::string> to_map() const;
  std::string to_text() const;
};

// "key = value" lines; '#' starts a comment. Later lines win.
std::map<std::string, std::string> parse_key_values(const std::string& text);
std::map<std::string, std::string> load_key_values(const std::string& path);

RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

}  // namespace mlfsc
