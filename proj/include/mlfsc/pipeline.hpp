#pragma once

#include "mlfsc/config.hpp"
#include "mlfsc/dataset.hpp"
#include "mlfsc/dictionary.hpp"
#include "mlfsc/eval.hpp"
#include "mlfsc/features.hpp"
#include "mlfsc/scoring.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mlfsc {

inline constexpr const char* kWeightsEnv = "MLFSC_WEIGHTS";

// PNG -> resized square image, grayscale for the raw baseline (when
// configured) and RGB otherwise.
Image load_image(const std::string& path, const RunConfig& config);

// Weights path precedence: explicit argument, config.weights, $MLFSC_WEIGHTS.
// Throws ConfigError when none is set and Error when the file is unusable.
NetworkPrefix resolve_network(const RunConfig& config, const std::string& explicit_path = {});

// A trained model on disk:
//   config.txt            frozen RunConfig
//   dict_raw.mlfd         raw mode
//   dict_<tap>.mlfd       mlfsc mode, one per tap
//   standardizer.json     mlfsc mode
struct Bundle {
  RunConfig config;
  std::optional<Dictionary> raw;
  TapDictionaries taps;
  ScoreStandardizer standardizer;
};

struct TrainSummary {
  std::map<std::string, std::vector<double>> objective_traces;  // per layer
  std::map<std::string, long> training_patches;
};

TrainSummary cmd_train(const RunConfig& config, const DatasetIndex& dataset,
                       const std::filesystem::path& bundle_dir, std::ostream* log = nullptr);

Bundle load_bundle(const std::filesystem::path& bundle_dir);

// Applies key=value overrides to the bundle's frozen config. Overrides of
// keys that fix extraction or the fitted standardizer must agree with the
// bundle; anything else (aggregation, jobs, weights, ...) is taken as given.
RunConfig merge_score_config(const RunConfig& frozen,
                             const std::map<std::string, std::string>& overrides);

// Keys a scoring request may not change.
const std::vector<std::string>& bundle_locked_keys();

struct ScoredImage {
  std::string path;
  bool anomalous = false;
  std::string defect_type;
  AnomalyScore score;
};

struct ScoreRequest {
  std::map<std::string, std::string> overrides;
  std::string weights;                         // explicit weights path
  std::optional<std::filesystem::path> heatmap_dir;
  std::optional<std::filesystem::path> histogram_dir;
  int histogram_bins = 20;
};

// Scores every test image, in index order. Rows with no label use "unknown".
std::vector<ScoredImage> score_images(const Bundle& bundle, const RunConfig& config,
                                      const std::vector<TestImage>& images,
                                      const std::string& weights_path = {},
                                      std::ostream* log = nullptr);

std::vector<ScoredImage> cmd_score(const std::filesystem::path& bundle_dir,
                                   const std::vector<TestImage>& images,
                                   const std::filesystem::path& out_csv,
                                   const ScoreRequest& request = {},
                                   std::ostream* log = nullptr);

// image_path,label,combined,topk_conv4,topk_conv7,topk_conv10,defect_type
std::string scores_csv(const std::vector<ScoredImage>& rows);

LabeledScores labeled(const std::vector<ScoredImage>& rows);

// Writes the JSON report and, when roc_csv is non-empty, the ROC points.
EvalReport cmd_evaluate(const std::filesystem::path& scores_csv_path,
                        const std::filesystem::path& report_json,
                        const std::filesystem::path& roc_csv = {});

// One PGM per scored layer, at the working resolution: <stem>_<layer>.pgm.
std::vector<std::filesystem::path> write_heatmaps(const ScoredImage& scored,
                                                  const RunConfig& config,
                                                  const std::filesystem::path& out_dir);

std::vector<std::filesystem::path> cmd_heatmap(const std::filesystem::path& bundle_dir,
                                               const std::string& image_path,
                                               const std::filesystem::path& out_dir,
                                               const ScoreRequest& request = {});

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace mlfsc
