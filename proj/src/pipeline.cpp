#include "mlfsc/pipeline.hpp"

#include "mlfsc/error.hpp"
#include "mlfsc/image_io.hpp"
#include "mlfsc/parallel.hpp"
#include "mlfsc/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

namespace mlfsc {

namespace fs = std::filesystem;

namespace {

constexpr const char* kConfigFile = "config.txt";
constexpr const char* kStandardizerFile = "standardizer.json";

std::string dictionary_file(const std::string& layer) { return "dict_" + layer + ".mlfd"; }

std::string format_score(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

DictionaryMeta expected_meta(const RunConfig& config, const std::string& layer, int channels) {
  return {config.resolved_patch_size(), config.resolved_stride(), channels, layer,
          config.resolved_subtract_mean(), config.alpha};
}

// Pools a seeded subset of the patches of many same-sized sources into one
// PatchMatrix without holding all of them. `total` is the number of patches
// across all sources; selected indices are kept in ascending order.
class PatchPool {
 public:
  PatchPool(std::size_t per_source, std::size_t sources, std::size_t cap, Eigen::Index dim,
            std::uint64_t seed, const std::string& stream)
      : per_source_(per_source) {
    const std::size_t total = per_source * sources;
    Rng rng = make_rng(seed, stream);
    selected_ = total <= cap ? std::vector<std::size_t>() : sample_without_replacement(rng, total, cap);
    if (total <= cap) {
      selected_.resize(total);
      for (std::size_t i = 0; i < total; ++i) selected_[i] = i;
    }
    std::sort(selected_.begin(), selected_.end());
    patches_.columns.resize(dim, static_cast<Eigen::Index>(selected_.size()));
  }

  void add(std::size_t source_index, const Tensor3& source, int patch_size, int stride,
           bool subtract_mean, const std::string& tag) {
    const PatchSampler sampler(source, patch_size, stride, subtract_mean);
    if (sampler.count() != per_source_ || sampler.dim() != patches_.dim())
      throw Error("training sources differ in size");
    const std::size_t lo = source_index * per_source_;
    auto it = std::lower_bound(selected_.begin(), selected_.end(), lo);
    for (; it != selected_.end() && *it < lo + per_source_; ++it) {
      const auto col = static_cast<Eigen::Index>(it - selected_.begin());
      const double mean = sampler.gather(
          *it - lo, {patches_.columns.col(col).data(), static_cast<std::size_t>(patches_.dim())});
      if (subtract_mean) {
        if (patches_.means.empty()) patches_.means.assign(selected_.size(), 0.0);
        patches_.means[static_cast<std::size_t>(col)] = mean;
      }
    }
    patches_.grid = sampler.grid();
    patches_.patch_size = patch_size;
    patches_.stride = stride;
    patches_.channels = source.channels;
    patches_.source = tag;
  }

  PatchMatrix& patches() { return patches_; }

 private:
  std::size_t per_source_;
  std::vector<std::size_t> selected_;
  PatchMatrix patches_;
};

std::size_t patch_cap(const RunConfig& config, Eigen::Index dim) {
  const std::size_t budget =
      static_cast<std::size_t>(config.train_budget_mb) * 1024 * 1024 /
      (static_cast<std::size_t>(dim) * sizeof(double));
  return std::max<std::size_t>(1, std::min<std::size_t>(
                                      static_cast<std::size_t>(config.max_train_patches), budget));
}

void log_line(std::ostream* log, const std::string& line) {
  if (log) *log << line << '\n' << std::flush;
}

Dictionary train_layer(const PatchMatrix& patches, const RunConfig& config, const std::string& layer,
                       TrainSummary& summary, std::ostream* log) {
  log_line(log, "learning " + layer + " dictionary: " + std::to_string(patches.count()) +
                    " patches of dim " + std::to_string(patches.dim()));
  LearnResult result =
      learn(patches, config.train_config(derive_seed(config.seed, "dictionary/" + layer)));
  summary.objective_traces[layer] = result.objective_trace;
  summary.training_patches[layer] = static_cast<long>(patches.count());
  if (!(result.dictionary.meta() == expected_meta(config, layer, patches.channels)))
    throw Error("internal: learned " + layer + " dictionary meta disagrees with the config");
  return std::move(result.dictionary);
}

}  // namespace

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Image load_image(const std::string& path, const RunConfig& config) {
  Image img = read_png(path);
  if (img.height != config.resize || img.width != config.resize)
    img = resize_area(img, config.resize, config.resize);
  if (config.mode == Mode::raw && config.grayscale) return to_grayscale(img);
  return to_rgb(img);
}

NetworkPrefix resolve_network(const RunConfig& config, const std::string& explicit_path) {
  std::string path = explicit_path;
  if (path.empty()) path = config.weights;
  if (path.empty())
    if (const char* env = std::getenv(kWeightsEnv)) path = env;
  if (path.empty())
    throw ConfigError(std::string("mlfsc mode needs a weights file: pass --weights or set ") +
                      kWeightsEnv);
  if (!fs::exists(path)) throw Error("weights file not found: " + path);
  return load_weights(path);
}

TrainSummary cmd_train(const RunConfig& config, const DatasetIndex& dataset,
                       const fs::path& bundle_dir, std::ostream* log) {
  config.validate();
  if (dataset.train_images.empty()) throw Error("no training images");
  std::error_code ec;
  fs::create_directories(bundle_dir, ec);
  if (ec) throw Error("cannot create bundle directory " + bundle_dir.string());

  const int p = config.resolved_patch_size();
  const int s = config.resolved_stride();
  const bool mean = config.resolved_subtract_mean();
  const std::size_t n_images = dataset.train_images.size();
  TrainSummary summary;

  if (config.mode == Mode::raw) {
    std::vector<Image> images(n_images);
    parallel_for(n_images, config.jobs, [&](std::size_t i) {
      images[i] = load_image(dataset.train_images[i], config);
    });
    const PatchSampler probe(images.front(), p, s, mean);
    PatchPool pool(probe.count(), n_images, patch_cap(config, probe.dim()), probe.dim(),
                   config.seed, "train/subsample/raw");
    for (std::size_t i = 0; i < n_images; ++i) pool.add(i, images[i], p, s, mean, "raw");
    const Dictionary dict = train_layer(pool.patches(), config, "raw", summary, log);
    save_dictionary(dict, (bundle_dir / dictionary_file("raw")).string());
    write_text_file(bundle_dir / kConfigFile, config.to_text());
    return summary;
  }

  if (n_images < 2) throw Error("mlfsc training needs at least 2 images to fit the standardizer");
  const NetworkPrefix net = resolve_network(config);
  RunConfig frozen = config;
  frozen.weights.clear();  // the weights path is a runtime choice, not part of the model

  std::vector<Tap> taps;
  for (const auto& name : config.taps) taps.push_back(tap_from_string(name));

  // Tap tensors are cached across the two passes when they fit the budget.
  const Image first = load_image(dataset.train_images.front(), config);
  TapOutputs first_taps = forward(net, first);
  std::size_t bytes_per_image = 0;
  for (Tap t : taps) bytes_per_image += first_taps[t].data.size() * sizeof(double);
  const bool cache = bytes_per_image * n_images <=
                     static_cast<std::size_t>(config.train_budget_mb) * 1024 * 1024;
  std::vector<std::optional<TapOutputs>> cached(n_images);

  std::map<std::string, PatchPool> pools;
  for (Tap t : taps) {
    const std::string name(tap_name(t));
    const PatchSampler probe(first_taps[t], p, s, mean);
    pools.emplace(name, PatchPool(probe.count(), n_images, patch_cap(config, probe.dim()),
                                  probe.dim(), config.seed, "train/subsample/" + name));
  }
  for (std::size_t i = 0; i < n_images; ++i) {
    TapOutputs outputs = i == 0 ? std::move(first_taps)
                                : forward(net, load_image(dataset.train_images[i], config));
    for (Tap t : taps) {
      const std::string name(tap_name(t));
      pools.at(name).add(i, outputs[t], p, s, mean, name);
    }
    if (cache) cached[i] = std::move(outputs);
    log_line(log, "features " + std::to_string(i + 1) + "/" + std::to_string(n_images));
  }

  TapDictionaries dictionaries;
  for (Tap t : taps) {
    const std::string name(tap_name(t));
    Dictionary dict = train_layer(pools.at(name).patches(), config, name, summary, log);
    pools.erase(name);
    save_dictionary(dict, (bundle_dir / dictionary_file(name)).string());
    dictionaries.emplace(name, std::move(dict));
  }

  const ScoringOptions options = config.scoring_options();
  std::vector<std::vector<LayerScore>> training_scores(n_images);
  parallel_for(n_images, config.jobs, [&](std::size_t i) {
    ScoringOptions local = options;
    local.jobs = 1;
    if (cached[i]) {
      training_scores[i] = mlfsc_layer_scores(*cached[i], dictionaries, local);
      cached[i].reset();
    } else {
      training_scores[i] = mlfsc_layer_scores(
          forward(net, load_image(dataset.train_images[i], config)), dictionaries, local);
    }
  });
  const ScoreStandardizer standardizer = fit_standardizer(training_scores);
  write_text_file(bundle_dir / kStandardizerFile, standardizer.to_json() + "\n");
  write_text_file(bundle_dir / kConfigFile, frozen.to_text());
  return summary;
}

Bundle load_bundle(const fs::path& bundle_dir) {
  if (!fs::is_directory(bundle_dir)) throw Error("bundle not found: " + bundle_dir.string());
  Bundle bundle;
  try {
    bundle.config = parse_config(read_text_file(bundle_dir / kConfigFile));
  } catch (const ConfigError& e) {
    throw Error("bundle config " + (bundle_dir / kConfigFile).string() + ": " + e.what());
  }
  const RunConfig& config = bundle.config;
  auto load_checked = [&](const std::string& layer, int channels) {
    Dictionary dict = load_dictionary((bundle_dir / dictionary_file(layer)).string());
    const DictionaryMeta want = expected_meta(config, layer, channels);
    if (!(dict.meta() == want))
      throw Error("dictionary " + dictionary_file(layer) +
                  " was trained with different extraction parameters than the bundle config");
    if (dict.size() != config.resolved_n_atoms())
      throw Error("dictionary " + dictionary_file(layer) + " has " +
                  std::to_string(dict.size()) + " atoms, config says " +
                  std::to_string(config.resolved_n_atoms()));
    return dict;
  };
  if (config.mode == Mode::raw) {
    bundle.raw = load_checked("raw", config.grayscale ? 1 : 3);
    bundle.standardizer = ScoreStandardizer::identity({"raw"});
    return bundle;
  }
  for (const auto& name : config.taps) {
    const Tap tap = tap_from_string(name);
    const int channels = NetworkPrefix::kChannels[tap == Tap::conv4 ? 4 : tap == Tap::conv7 ? 7 : 10];
    bundle.taps.emplace(name, load_checked(name, channels));
  }
  bundle.standardizer = ScoreStandardizer::from_json(read_text_file(bundle_dir / kStandardizerFile));
  for (const auto& name : config.taps) bundle.standardizer.at(name);
  return bundle;
}

const std::vector<std::string>& bundle_locked_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k = RunConfig::extraction_keys();
    k.insert(k.end(), {"alpha", "k", "error_norm"});
    return k;
  }();
  return keys;
}

RunConfig merge_score_config(const RunConfig& frozen,
                             const std::map<std::string, std::string>& overrides) {
  RunConfig merged = frozen;
  for (const auto& [key, value] : overrides) merged.set(key, value);
  const auto want = frozen.to_map();
  const auto got = merged.to_map();
  for (const auto& key : bundle_locked_keys())
    if (want.at(key) != got.at(key))
      throw ConfigError("config mismatch: bundle was trained with " + key + " = " +
                        want.at(key) + ", request has " + got.at(key));
  merged.validate();
  return merged;
}

std::vector<ScoredImage> score_images(const Bundle& bundle, const RunConfig& config,
                                      const std::vector<TestImage>& images,
                                      const std::string& weights_path, std::ostream* log) {
  std::optional<NetworkPrefix> net;
  if (config.mode == Mode::mlfsc) net = resolve_network(config, weights_path);
  ScoringOptions options = config.scoring_options();
  // Images are spread over the workers; each image is scored single-threaded
  // so results do not depend on the job count.
  options.jobs = 1;

  std::vector<ScoredImage> rows(images.size());
  parallel_for(images.size(), config.jobs, [&](std::size_t i) {
    const TestImage& t = images[i];
    ScoredImage& row = rows[i];
    row.path = t.path;
    row.anomalous = t.anomalous;
    row.defect_type = t.defect_type;
    const Image img = load_image(t.path, config);
    row.score = config.mode == Mode::raw
                    ? score_image_raw(img, *bundle.raw, options, t.path)
                    : score_image_mlfsc(img, *net, bundle.taps, options, bundle.standardizer,
                                        t.path);
  });
  log_line(log, "scored " + std::to_string(rows.size()) + " images");
  return rows;
}

std::string scores_csv(const std::vector<ScoredImage>& rows) {
  std::string out = "image_path,label,combined,topk_conv4,topk_conv7,topk_conv10,defect_type\n";
  for (const auto& row : rows) {
    out += csv_field(row.path);
    out += row.defect_type.empty() && !row.anomalous ? ",unknown" : row.anomalous ? ",anomalous" : ",normal";
    out += "," + format_score(row.score.combined);
    for (Tap tap : kAllTaps) {
      out += ",";
      if (const LayerScore* l = row.score.layer(tap_name(tap))) out += format_score(l->topk_sum);
    }
    out += "," + csv_field(row.defect_type) + "\n";
  }
  return out;
}

LabeledScores labeled(const std::vector<ScoredImage>& rows) {
  LabeledScores data;
  for (const auto& row : rows) data.add(row.score.combined, row.anomalous);
  return data;
}

std::vector<ScoredImage> cmd_score(const fs::path& bundle_dir, const std::vector<TestImage>& images,
                                   const fs::path& out_csv, const ScoreRequest& request,
                                   std::ostream* log) {
  if (images.empty()) throw Error("nothing to score");
  const Bundle bundle = load_bundle(bundle_dir);
  const RunConfig config = merge_score_config(bundle.config, request.overrides);
  auto rows = score_images(bundle, config, images, request.weights, log);
  write_text_file(out_csv, scores_csv(rows));
  if (request.heatmap_dir) {
    fs::create_directories(*request.heatmap_dir);
    for (const auto& row : rows) write_heatmaps(row, config, *request.heatmap_dir);
  }
  if (request.histogram_dir) {
    fs::create_directories(*request.histogram_dir);
    std::vector<AnomalyScore> scores;
    for (const auto& row : rows) scores.push_back(row.score);
    for (const auto& h : error_histogram(scores, request.histogram_bins))
      write_text_file(*request.histogram_dir / ("hist_" + h.layer + ".csv"), h.to_csv());
  }
  return rows;
}

EvalReport cmd_evaluate(const fs::path& scores_csv_path, const fs::path& report_json,
                        const fs::path& roc_csv) {
  const EvalReport report = evaluate(scores_csv_path.string());
  write_text_file(report_json, report.to_json());
  if (!roc_csv.empty()) write_text_file(roc_csv, report.roc_csv());
  return report;
}

std::vector<fs::path> write_heatmaps(const ScoredImage& scored, const RunConfig& config,
                                     const fs::path& out_dir) {
  const int p = config.resolved_patch_size();
  const int s = config.resolved_stride();
  const std::string stem = fs::path(scored.path).stem().string();
  const std::string prefix = scored.defect_type.empty() ? stem : scored.defect_type + "_" + stem;
  std::vector<fs::path> written;
  for (const LayerScore& layer : scored.score.layers) {
    Image map;
    if (layer.tap == "raw") {
      map = patch_grid_to_heatmap(layer.per_patch_errors, layer.grid, config.resize,
                                  config.resize, p, s);
    } else {
      // Built on the feature-cell grid, then each cell is blown up to the
      // input pixels it steps over.
      const ReceptiveField rf = receptive_field(layer.tap);
      const int cells = config.resize / rf.jump;
      map = upscale_nearest(
          patch_grid_to_heatmap(layer.per_patch_errors, layer.grid, cells, cells, p, s), rf.jump);
    }
    const fs::path path = out_dir / (prefix + "_" + layer.tap + ".pgm");
    write_pgm(path.string(), map);
    written.push_back(path);
  }
  return written;
}

std::vector<fs::path> cmd_heatmap(const fs::path& bundle_dir, const std::string& image_path,
                                  const fs::path& out_dir, const ScoreRequest& request) {
  const Bundle bundle = load_bundle(bundle_dir);
  const RunConfig config = merge_score_config(bundle.config, request.overrides);
  const auto rows = score_images(bundle, config, {TestImage{image_path, false, ""}}, request.weights);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create " + out_dir.string());
  return write_heatmaps(rows.front(), config, out_dir);
}

}  // namespace mlfsc
