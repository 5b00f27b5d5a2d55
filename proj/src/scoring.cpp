#include "mlfsc/scoring.hpp"

#include "mlfsc/error.hpp"
#include "mlfsc/lasso.hpp"
#include "mlfsc/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

namespace mlfsc {

std::string_view to_string(ErrorNorm norm) {
  return norm == ErrorNorm::l2 ? "l2" : "squared";
}

std::string_view to_string(Aggregation rule) {
  switch (rule) {
    case Aggregation::z_sum: return "z-sum";
    case Aggregation::max_z: return "max-z";
    case Aggregation::single_layer: return "single-layer";
  }
  return "z-sum";
}

ErrorNorm error_norm_from_string(std::string_view name) {
  if (name == "l2") return ErrorNorm::l2;
  if (name == "squared") return ErrorNorm::squared;
  throw ConfigError("unknown error norm '" + std::string(name) + "' (l2 or squared)");
}

Aggregation aggregation_from_string(std::string_view name) {
  if (name == "z-sum") return Aggregation::z_sum;
  if (name == "max-z") return Aggregation::max_z;
  if (name == "single-layer") return Aggregation::single_layer;
  throw ConfigError("unknown aggregation '" + std::string(name) +
                    "' (z-sum, max-z or single-layer)");
}

ScoreStandardizer ScoreStandardizer::identity(const std::vector<std::string>& taps) {
  ScoreStandardizer s;
  for (const auto& t : taps) s.layers[t] = {0.0, 1.0};
  return s;
}

const LayerMoments& ScoreStandardizer::at(const std::string& tap) const {
  const auto it = layers.find(tap);
  if (it == layers.end()) throw Error("standardizer has no entry for layer " + tap);
  return it->second;
}

std::string ScoreStandardizer::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [tap, m] : layers) j[tap] = {{"mean", m.mean}, {"std", m.std}};
  return j.dump(2);
}

ScoreStandardizer ScoreStandardizer::from_json(const std::string& text) {
  ScoreStandardizer s;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& [tap, m] : j.items())
      s.layers[tap] = {m.at("mean").get<double>(), m.at("std").get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed standardizer: ") + e.what());
  }
  for (const auto& [tap, m] : s.layers)
    if (!(m.std > 0.0) || !std::isfinite(m.mean))
      throw Error("standardizer entry " + tap + " is invalid");
  return s;
}

const LayerScore* AnomalyScore::layer(std::string_view tap) const {
  for (const auto& l : layers)
    if (l.tap == tap) return &l;
  return nullptr;
}

double topk_sum(std::span<const double> values, int k) {
  if (k < 1) throw Error("top-k needs k >= 1");
  std::vector<double> sorted(values.begin(), values.end());
  const std::size_t kk = std::min<std::size_t>(sorted.size(), static_cast<std::size_t>(k));
  std::partial_sort(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(kk),
                    sorted.end(), std::greater<>());
  double sum = 0.0;
  for (std::size_t i = 0; i < kk; ++i) sum += sorted[i];
  return sum;
}

namespace {

double error_value(const SparseCode& code, ErrorNorm norm) {
  return norm == ErrorNorm::l2 ? code.residual_norm
                               : code.residual_norm * code.residual_norm;
}

void check_k(int k) {
  if (k < 1) throw Error("top-k needs k >= 1");
}

}  // namespace

LayerScore score_layer(const PatchMatrix& patches, const Dictionary& dictionary,
                       double alpha, int k, ErrorNorm norm, int jobs) {
  check_k(k);
  if (patches.dim() != dictionary.dim())
    throw Error("score_layer: patch dim " + std::to_string(patches.dim()) +
                " does not match dictionary dim " + std::to_string(dictionary.dim()));
  const LarsEncoder encoder(dictionary.atoms());
  LayerScore score;
  score.tap = patches.source;
  score.grid = patches.grid;
  score.per_patch_errors.resize(static_cast<std::size_t>(patches.count()));
  parallel_for(score.per_patch_errors.size(), jobs, [&](std::size_t i) {
    score.per_patch_errors[i] = error_value(
        encoder.encode(patches.columns.col(static_cast<Eigen::Index>(i)), alpha), norm);
  });
  score.k = static_cast<int>(std::min<std::size_t>(score.per_patch_errors.size(),
                                                   static_cast<std::size_t>(k)));
  score.topk_sum = topk_sum(score.per_patch_errors, k);
  return score;
}

LayerScore score_tensor(const Tensor3& source, const Dictionary& dictionary,
                        const ScoringOptions& options) {
  check_k(options.k);
  const DictionaryMeta& meta = dictionary.meta();
  if (meta.channels != source.channels)
    throw Error("dictionary for " + meta.source + " expects " +
                std::to_string(meta.channels) + " channels, source has " +
                std::to_string(source.channels));
  const PatchSampler sampler(source, meta.patch_size, meta.stride, meta.mean_subtraction);
  if (sampler.dim() != dictionary.dim())
    throw Error("dictionary for " + meta.source + " has dim " +
                std::to_string(dictionary.dim()) + ", patches have dim " +
                std::to_string(sampler.dim()));
  const LarsEncoder encoder(dictionary.atoms());
  LayerScore score;
  score.tap = meta.source;
  score.grid = sampler.grid();
  score.per_patch_errors.resize(sampler.count());

  const int workers = std::max(1, std::min<int>(options.jobs, static_cast<int>(sampler.count())));
  const std::size_t chunk = (sampler.count() + workers - 1) / workers;
  parallel_for(static_cast<std::size_t>(workers), workers, [&](std::size_t w) {
    Eigen::VectorXd buffer(sampler.dim());
    const std::size_t end = std::min(sampler.count(), (w + 1) * chunk);
    for (std::size_t i = w * chunk; i < end; ++i) {
      sampler.gather(i, {buffer.data(), static_cast<std::size_t>(buffer.size())});
      score.per_patch_errors[i] = error_value(encoder.encode(buffer, options.alpha), options.norm);
    }
  });
  score.k = static_cast<int>(std::min<std::size_t>(score.per_patch_errors.size(),
                                                   static_cast<std::size_t>(options.k)));
  score.topk_sum = topk_sum(score.per_patch_errors, options.k);
  return score;
}

ScoreStandardizer fit_standardizer(
    const std::vector<std::vector<LayerScore>>& training_scores) {
  if (training_scores.size() < 2)
    throw Error("fit_standardizer needs at least 2 training images, got " +
                std::to_string(training_scores.size()));
  std::map<std::string, std::vector<double>> by_layer;
  for (const auto& image : training_scores)
    for (const auto& layer : image) by_layer[layer.tap].push_back(layer.topk_sum);

  ScoreStandardizer s;
  for (const auto& [tap, values] : by_layer) {
    if (values.size() != training_scores.size())
      throw Error("layer " + tap + " is missing from some training images");
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (n - 1.0));
    s.layers[tap] = {mean, sd > 0.0 && std::isfinite(sd) ? sd : 1.0};
  }
  return s;
}

double combine(std::span<const LayerScore> layer_scores,
               const ScoreStandardizer& standardizer, Aggregation rule,
               const std::string& single_tap) {
  if (layer_scores.empty()) throw Error("combine: no layer scores");
  // Visit layers in name order so the floating-point sum does not depend on
  // the order the caller supplied them in.
  std::vector<const LayerScore*> ordered;
  for (const auto& l : layer_scores) ordered.push_back(&l);
  std::sort(ordered.begin(), ordered.end(),
            [](const LayerScore* a, const LayerScore* b) { return a->tap < b->tap; });

  double total = 0.0;
  double best = -std::numeric_limits<double>::infinity();
  const LayerScore* single = nullptr;
  for (const LayerScore* l : ordered) {
    const LayerMoments& m = standardizer.at(l->tap);
    const double z = (l->topk_sum - m.mean) / m.std;
    total += z;
    best = std::max(best, z);
    if (l->tap == single_tap) single = l;
  }
  switch (rule) {
    case Aggregation::z_sum: return total;
    case Aggregation::max_z: return best;
    case Aggregation::single_layer: {
      if (!single) throw Error("combine: layer " + single_tap + " not scored");
      const LayerMoments& m = standardizer.at(single_tap);
      return (single->topk_sum - m.mean) / m.std;
    }
  }
  return total;
}

std::vector<LayerScore> mlfsc_layer_scores(const TapOutputs& taps,
                                           const TapDictionaries& dictionaries,
                                           const ScoringOptions& options) {
  if (options.taps.empty()) throw Error("no taps requested");
  std::vector<LayerScore> scores;
  for (const std::string& name : options.taps) {
    const Tap tap = tap_from_string(name);
    const auto it = dictionaries.find(name);
    if (it == dictionaries.end()) throw Error("no dictionary for tap " + name);
    if (it->second.meta().source != name)
      throw Error("dictionary registered for " + name + " was trained on " +
                  it->second.meta().source);
    scores.push_back(score_tensor(taps[tap], it->second, options));
  }
  return scores;
}

AnomalyScore score_image_mlfsc(const Image& image, const NetworkPrefix& net,
                               const TapDictionaries& dictionaries,
                               const ScoringOptions& options,
                               const ScoreStandardizer& standardizer,
                               std::string image_id) {
  for (const std::string& tap : options.taps)
    if (!dictionaries.contains(tap)) throw Error("no dictionary for tap " + tap);
  AnomalyScore result;
  result.image_id = std::move(image_id);
  result.layers = mlfsc_layer_scores(forward(net, image), dictionaries, options);
  result.combined = combine(result.layers, standardizer, options.aggregation, options.single_tap);
  for (const auto& l : result.layers) result.standardization.layers[l.tap] = standardizer.at(l.tap);
  return result;
}

AnomalyScore score_image_raw(const Image& gray, const Dictionary& dictionary,
                             const ScoringOptions& options, std::string image_id) {
  if (dictionary.meta().source != "raw")
    throw Error("raw scoring needs a raw-image dictionary, got " + dictionary.meta().source);
  AnomalyScore result;
  result.image_id = std::move(image_id);
  result.layers.push_back(score_tensor(gray, dictionary, options));
  result.standardization = ScoreStandardizer::identity({"raw"});
  result.combined = result.layers.front().topk_sum;
  return result;
}

Histogram histogram_of(std::string layer, std::span<const double> values, int bins) {
  if (bins < 1) throw Error("histogram needs bins >= 1");
  if (values.empty()) throw Error("histogram of an empty score list");
  Histogram h;
  h.layer = std::move(layer);
  h.min = *std::min_element(values.begin(), values.end());
  h.max = *std::max_element(values.begin(), values.end());
  h.counts.assign(static_cast<std::size_t>(bins), 0);
  const double width = (h.max - h.min) / bins;
  for (double v : values) {
    int bin = width > 0.0 ? static_cast<int>((v - h.min) / width) : 0;
    h.counts[static_cast<std::size_t>(std::clamp(bin, 0, bins - 1))]++;
  }
  return h;
}

std::string Histogram::to_csv() const {
  std::ostringstream out;
  out.precision(17);
  out << "bin,lower,upper,count\n";
  const int bins = static_cast<int>(counts.size());
  const double width = (max - min) / bins;
  for (int b = 0; b < bins; ++b)
    out << b << ',' << min + b * width << ',' << (b + 1 == bins ? max : min + (b + 1) * width)
        << ',' << counts[static_cast<std::size_t>(b)] << '\n';
  return out.str();
}

std::vector<Histogram> error_histogram(std::span<const AnomalyScore> scores, int bins) {
  if (scores.empty()) throw Error("error_histogram: empty score list");
  std::vector<Histogram> out;
  std::vector<double> values;
  for (const auto& s : scores) values.push_back(s.combined);
  out.push_back(histogram_of("combined", values, bins));
  for (const auto& layer : scores.front().layers) {
    values.clear();
    for (const auto& s : scores) {
      const LayerScore* l = s.layer(layer.tap);
      if (!l) throw Error("error_histogram: layer " + layer.tap + " missing from " + s.image_id);
      values.push_back(l->topk_sum);
    }
    out.push_back(histogram_of(layer.tap, values, bins));
  }
  return out;
}

}  // namespace mlfsc
