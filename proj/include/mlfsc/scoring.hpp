#pragma once

#include "mlfsc/dictionary.hpp"
#include "mlfsc/features.hpp"
#include "mlfsc/patches.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace mlfsc {

enum class ErrorNorm { l2, squared };
enum class Aggregation { z_sum, max_z, single_layer };

std::string_view to_string(ErrorNorm norm);
std::string_view to_string(Aggregation rule);
ErrorNorm error_norm_from_string(std::string_view name);
Aggregation aggregation_from_string(std::string_view name);

struct LayerScore {
  std::string tap;                  // "raw", "conv4", ...
  std::vector<double> per_patch_errors;
  PatchGrid grid;
  double topk_sum = 0.0;
  int k = 0;                        // effective k after clipping to the patch count
};

struct LayerMoments {
  double mean = 0.0;
  double std = 1.0;
  bool operator==(const LayerMoments&) const = default;
};

// Per-layer mean/std of topk_sum over training images.
struct ScoreStandardizer {
  std::map<std::string, LayerMoments> layers;

  // mean 0, std 1 for each named layer.
  static ScoreStandardizer identity(const std::vector<std::string>& taps);
  const LayerMoments& at(const std::string& tap) const;

  std::string to_json() const;
  static ScoreStandardizer from_json(const std::string& text);
  bool operator==(const ScoreStandardizer&) const = default;
};

struct ScoringOptions {
  double alpha = 1.0;
  int k = 5;
  ErrorNorm norm = ErrorNorm::l2;
  Aggregation aggregation = Aggregation::z_sum;
  std::string single_tap = "conv10";  // used by Aggregation::single_layer
  std::vector<std::string> taps{"conv4", "conv7", "conv10"};
  int jobs = 1;                       // patch-level parallelism
};

struct AnomalyScore {
  std::string image_id;
  std::vector<LayerScore> layers;
  double combined = 0.0;
  ScoreStandardizer standardization;  // the moments `combined` was built from

  const LayerScore* layer(std::string_view tap) const;
};

// Sum of the k largest values (k clipped to values.size()).
double topk_sum(std::span<const double> values, int k);

// Encodes every column with LARS and records ||x - D c|| (or its square).
LayerScore score_layer(const PatchMatrix& patches, const Dictionary& dictionary,
                       double alpha, int k, ErrorNorm norm = ErrorNorm::l2,
                       int jobs = 1);

// Same as score_layer(extract_patches(source, ...)) with extraction
// parameters taken from the dictionary meta, without materializing patches.
LayerScore score_tensor(const Tensor3& source, const Dictionary& dictionary,
                        const ScoringOptions& options);

// Sample (n - 1) mean/std per layer; std <= 0 falls back to 1.
ScoreStandardizer fit_standardizer(
    const std::vector<std::vector<LayerScore>>& training_scores);

// z-sum: sum_l (s_l - mu_l) / sigma_l; max-z: the largest z; single-layer:
// the z of options.single_tap. Independent of layer order.
double combine(std::span<const LayerScore> layer_scores,
               const ScoreStandardizer& standardizer,
               Aggregation rule = Aggregation::z_sum,
               const std::string& single_tap = "conv10");

using TapDictionaries = std::map<std::string, Dictionary>;

// Per-tap layer scores of an RGB image (no combination).
std::vector<LayerScore> mlfsc_layer_scores(const TapOutputs& taps,
                                           const TapDictionaries& dictionaries,
                                           const ScoringOptions& options);

// forward -> patches per tap -> score_layer per tap -> combine.
AnomalyScore score_image_mlfsc(const Image& image, const NetworkPrefix& net,
                               const TapDictionaries& dictionaries,
                               const ScoringOptions& options,
                               const ScoreStandardizer& standardizer,
                               std::string image_id = {});

// Classical sparse coding on a grayscale image: combined = top-k sum.
AnomalyScore score_image_raw(const Image& gray, const Dictionary& dictionary,
                             const ScoringOptions& options, std::string image_id = {});

struct Histogram {
  std::string layer;  // "combined" or a tap name
  double min = 0.0;
  double max = 0.0;
  std::vector<int> counts;

  std::string to_csv() const;  // bin,lower,upper,count
};

// Equal-width histograms over [min, max] of the combined score and of every
// layer's topk_sum.
std::vector<Histogram> error_histogram(std::span<const AnomalyScore> scores, int bins);
Histogram histogram_of(std::string layer, std::span<const double> values, int bins);

}  // namespace mlfsc
