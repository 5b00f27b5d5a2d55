// mlfsc command-line front end: train, score, evaluate, heatmap, synth,
// make-weights. Exit codes: 0 success, 1 usage or configuration error,
// 2 data error.
#include "mlfsc/config.hpp"
#include "mlfsc/dataset.hpp"
#include "mlfsc/error.hpp"
#include "mlfsc/features.hpp"
#include "mlfsc/pipeline.hpp"
#include "mlfsc/rng.hpp"
#include "mlfsc/synth.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace {

using namespace mlfsc;

// One --flag per RunConfig key (underscores become dashes). Values are kept
// as text and applied through RunConfig::set so the file and flag paths share
// one parser.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "key = value config file")->check(CLI::ExistingFile);
    for (const auto& [key, _] : RunConfig().to_map()) {
      std::string flag = key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      options[key] = app.add_option("--" + flag, values[key], "config key " + key);
    }
  }

  // File values first, then flags.
  std::map<std::string, std::string> overrides() const {
    std::map<std::string, std::string> out;
    if (!config_file.empty()) out = load_key_values(config_file);
    for (const auto& [key, opt] : options)
      if (opt->count() > 0) out[key] = values.at(key);
    return out;
  }

  RunConfig resolve() const {
    RunConfig config;
    for (const auto& [key, value] : overrides()) config.set(key, value);
    config.validate();
    return config;
  }
};

std::vector<TestImage> loose_images(const std::vector<std::string>& paths) {
  std::vector<TestImage> out;
  for (const auto& p : paths) out.push_back({p, false, ""});
  return out;
}

void print_report(const EvalReport& r) {
  std::printf("auroc %.6f  threshold %.6g  r1 %.4f  r2 %.4f  balanced %.4f  (%zu normal, %zu anomalous)\n",
              r.auroc, r.threshold, r.r1, r.r2, r.balanced, r.n_normal, r.n_anomalous);
}

NetworkPrefix weights_with_golden(std::uint64_t seed, int golden_size) {
  NetworkPrefix net = random_network(seed);
  // The file stores f32, so the golden activations are computed from the
  // values a reader will actually see.
  auto to_f32 = [](double& v) { v = static_cast<float>(v); };
  for (ConvLayer& layer : net.layers) {
    std::for_each(layer.weights.begin(), layer.weights.end(), to_f32);
    std::for_each(layer.bias.begin(), layer.bias.end(), to_f32);
  }
  if (golden_size > 0) {
    Rng rng = make_rng(seed, "weights/golden");
    Image input(3, golden_size, golden_size);
    for (double& v : input.data) v = static_cast<float>(uniform01(rng));
    const TapOutputs taps = forward(net, input);
    net.golden = GoldenBlock{input, {taps.conv4, taps.conv7, taps.conv10}};
  }
  return net;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale feature sparse coding for texture anomaly detection"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "no progress output");

  // train
  auto* train = app.add_subcommand("train", "learn dictionaries (and a standardizer) from train/good");
  std::string train_root, train_category, train_out;
  ConfigFlags train_flags;
  train->add_option("--data", train_root, "dataset root")->required()->check(CLI::ExistingDirectory);
  train->add_option("--category", train_category, "category directory under the root")->required();
  train->add_option("--out", train_out, "bundle directory")->required();
  train_flags.attach(*train);

  // score
  auto* score = app.add_subcommand("score", "score test images against a bundle");
  std::string score_bundle, score_root, score_category, score_out = "scores.csv";
  std::string heatmap_dir, histogram_dir;
  std::vector<std::string> score_images_list;
  int bins = 20;
  ConfigFlags score_flags;
  score->add_option("--bundle", score_bundle, "bundle directory")->required();
  score->add_option("--data", score_root, "dataset root");
  score->add_option("--category", score_category, "category directory under the root");
  score->add_option("--image", score_images_list, "score individual images instead of a dataset");
  score->add_option("--out", score_out, "scores CSV")->capture_default_str();
  score->add_option("--heatmaps", heatmap_dir, "write per-layer PGM heatmaps here");
  score->add_option("--histograms", histogram_dir, "write per-layer histogram CSVs here");
  score->add_option("--bins", bins, "histogram bins")->capture_default_str()->check(CLI::PositiveNumber);
  score_flags.attach(*score);

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "AUROC and best balanced threshold");
  std::string eval_scores, eval_out = "report.json", eval_roc;
  evaluate_cmd->add_option("--scores", eval_scores, "scores CSV")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--out", eval_out, "JSON report")->capture_default_str();
  evaluate_cmd->add_option("--roc", eval_roc, "ROC points CSV");

  // heatmap
  auto* heatmap = app.add_subcommand("heatmap", "per-layer error heatmaps for one image");
  std::string heat_bundle, heat_image, heat_out = ".";
  ConfigFlags heat_flags;
  heatmap->add_option("--bundle", heat_bundle, "bundle directory")->required();
  heatmap->add_option("--image", heat_image, "PNG image")->required()->check(CLI::ExistingFile);
  heatmap->add_option("--out", heat_out, "output directory")->capture_default_str();
  heat_flags.attach(*heatmap);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic texture category");
  std::string synth_out;
  std::uint64_t synth_seed = 0;
  SynthParams params;
  synth->add_option("--out", synth_out, "category directory to create")->required();
  synth->add_option("--seed", synth_seed, "seed")->capture_default_str();
  synth->add_option("--size", params.size, "image side in pixels")->capture_default_str();
  synth->add_option("--n-train", params.n_train, "training images")->capture_default_str();
  synth->add_option("--n-good", params.n_test_good, "normal test images")->capture_default_str();
  synth->add_option("--n-small", params.n_test_small, "small-anomaly test images")->capture_default_str();
  synth->add_option("--n-large", params.n_test_large, "large-anomaly test images")->capture_default_str();
  synth->add_option("--small-min", params.small_min, "smallest square side")->capture_default_str();
  synth->add_option("--small-max", params.small_max, "largest square side")->capture_default_str();
  synth->add_option("--large-min", params.large_min, "smallest stain diameter")->capture_default_str();
  synth->add_option("--large-max", params.large_max, "largest stain diameter")->capture_default_str();
  synth->add_option("--noise", params.noise, "pixel noise std")->capture_default_str();
  synth->add_option("--contrast", params.contrast, "texture amplitude")->capture_default_str();
  synth->add_option("--illumination", params.illumination, "slow lighting amplitude")
      ->capture_default_str();
  synth->add_option("--stain-luma", params.stain_luma, "large anomaly brightness change")
      ->capture_default_str();
  synth->add_option("--stain-chroma", params.stain_chroma, "large anomaly colour change")
      ->capture_default_str();

  // make-weights
  auto* make_weights = app.add_subcommand("make-weights", "write a seeded random weights file");
  std::string weights_out;
  std::uint64_t weights_seed = 0;
  int golden_size = 64;
  make_weights->add_option("--out", weights_out, "weights file")->required();
  make_weights->add_option("--seed", weights_seed, "seed")->capture_default_str();
  make_weights->add_option("--golden-size", golden_size, "golden input side (0 = none)")->capture_default_str()
      ->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }
  std::ostream* log = quiet ? nullptr : &std::cerr;

  try {
    if (*train) {
      const RunConfig config = train_flags.resolve();
      const DatasetIndex dataset = ingest(train_root, train_category);
      const TrainSummary summary = cmd_train(config, dataset, train_out, log);
      for (const auto& [layer, trace] : summary.objective_traces)
        std::printf("%s: %ld patches, objective %.6g -> %.6g over %zu epochs\n", layer.c_str(),
                    summary.training_patches.at(layer), trace.front(), trace.back(),
                    trace.size() - 1);
      std::printf("bundle written to %s\n", train_out.c_str());
    } else if (*score) {
      std::vector<TestImage> images;
      if (!score_images_list.empty()) {
        if (!score_root.empty()) throw ConfigError("use either --data/--category or --image");
        images = loose_images(score_images_list);
      } else {
        if (score_root.empty() || score_category.empty())
          throw ConfigError("score needs --data and --category, or --image");
        images = ingest(score_root, score_category).test_images;
      }
      ScoreRequest request;
      request.overrides = score_flags.overrides();
      if (!heatmap_dir.empty()) request.heatmap_dir = heatmap_dir;
      if (!histogram_dir.empty()) request.histogram_dir = histogram_dir;
      request.histogram_bins = bins;
      const auto rows = cmd_score(score_bundle, images, score_out, request, log);
      std::printf("%zu rows written to %s\n", rows.size(), score_out.c_str());
    } else if (*evaluate_cmd) {
      print_report(cmd_evaluate(eval_scores, eval_out, eval_roc));
    } else if (*heatmap) {
      ScoreRequest request;
      request.overrides = heat_flags.overrides();
      for (const auto& path : cmd_heatmap(heat_bundle, heat_image, heat_out, request))
        std::printf("%s\n", path.string().c_str());
    } else if (*synth) {
      const SynthSummary s = cmd_synth(synth_out, params, synth_seed);
      std::printf("train %d, test good %d, small %d, large %d\n", s.train, s.test_good,
                  s.test_small, s.test_large);
    } else if (*make_weights) {
      save_weights(weights_with_golden(weights_seed, golden_size), weights_out);
      std::printf("weights written to %s\n", weights_out.c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
