#include "mlfsc/error.hpp"
#include "mlfsc/image_io.hpp"
#include "mlfsc/pipeline.hpp"
#include "mlfsc/synth.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace mlfsc;
namespace fs = std::filesystem;

namespace {

SynthParams small_params() {
  SynthParams p;
  p.size = 64;
  p.n_train = 4;
  p.n_test_good = 2;
  p.n_test_small = 2;
  p.n_test_large = 2;
  p.large_min = 20;
  p.large_max = 28;
  return p;
}

std::string bytes_of(const fs::path& p) { return read_text_file(p); }

// One shared synthetic dataset and weights file for the whole binary.
struct Fixture {
  oracle::TempDir dir{"pipeline"};
  fs::path root = dir.path / "data";
  fs::path weights = dir.path / "w.mlfw";
  DatasetIndex index;
  Fixture() {
    cmd_synth(root / "tex", small_params(), 11);
    index = ingest(root, "tex");
    save_weights(random_network(5), weights.string());
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

RunConfig raw_config() {
  RunConfig c;
  c.set("mode", "raw");
  c.set("resize", "64");
  c.set("n_atoms", "8");
  c.set("epochs", "3");
  return c;
}

RunConfig mlfsc_config() {
  RunConfig c;
  c.set("resize", "64");
  c.set("epochs", "3");
  c.set("n_atoms", "3");  // conv10 yields one patch per 64x64 image
  c.set("weights", fixture().weights.string());
  return c;
}

}  // namespace

TEST_CASE("synthetic dataset layout and determinism") {
  oracle::TempDir dir("synth");
  const SynthSummary s = cmd_synth(dir.path / "a", small_params(), 3);
  CHECK(s.train == 4);
  CHECK(s.test_small == 2);
  cmd_synth(dir.path / "b", small_params(), 3);
  cmd_synth(dir.path / "c", small_params(), 4);
  CHECK(bytes_of(dir.path / "a/test/large/000.png") == bytes_of(dir.path / "b/test/large/000.png"));
  CHECK(bytes_of(dir.path / "a/test/large/000.png") != bytes_of(dir.path / "c/test/large/000.png"));
  CHECK(fs::exists(dir.path / "a/ground_truth/small/001_mask.png"));
  const Image mask = read_png(dir / "a/ground_truth/small/000_mask.png");
  int lit = 0;
  for (double v : mask.data) lit += v > 0.5;
  CHECK(lit >= 25);
  CHECK(lit <= 64);

  SynthParams bad = small_params();
  bad.large_max = 60;
  CHECK_THROWS_AS(cmd_synth(dir.path / "d", bad, 0), ConfigError);
}

TEST_CASE("ingest") {
  const DatasetIndex& idx = fixture().index;
  CHECK(idx.category == "tex");
  CHECK(idx.train_images.size() == 4);
  REQUIRE(idx.test_images.size() == 6);
  CHECK(std::is_sorted(idx.train_images.begin(), idx.train_images.end()));
  CHECK(idx.test_images[0].defect_type == "good");
  CHECK_FALSE(idx.test_images[0].anomalous);
  CHECK(idx.test_images[2].defect_type == "large");
  CHECK(idx.test_images[5].anomalous);
  CHECK(ingest(fixture().root, "tex").test_images.size() == 6);

  oracle::TempDir dir("ingest");
  fs::create_directories(dir.path / "cat/train/good");
  CHECK_THROWS_AS(ingest(dir.path, "cat"), Error);
  fs::copy_file(idx.train_images[0], dir.path / "cat/train/good/000.png");
  fs::create_directories(dir.path / "cat/test/good");
  CHECK_THROWS_WITH_AS(ingest(dir.path, "cat"), doctest::Contains("no test images"), Error);
  std::ofstream(dir.path / "cat/test/good/broken.png") << "not a png";
  CHECK_THROWS_WITH_AS(ingest(dir.path, "cat"), doctest::Contains("broken.png"), Error);
  CHECK_THROWS_AS(ingest(dir.path, "other"), Error);
}

TEST_CASE("raw train, score and evaluate") {
  oracle::TempDir dir("raw");
  const DatasetIndex& idx = fixture().index;
  const TrainSummary t = cmd_train(raw_config(), idx, dir.path / "b1");
  cmd_train(raw_config(), idx, dir.path / "b2");
  CHECK(fs::exists(dir.path / "b1/dict_raw.mlfd"));
  CHECK(fs::exists(dir.path / "b1/config.txt"));
  CHECK_FALSE(fs::exists(dir.path / "b1/standardizer.json"));
  CHECK(bytes_of(dir.path / "b1/dict_raw.mlfd") == bytes_of(dir.path / "b2/dict_raw.mlfd"));
  CHECK(t.training_patches.at("raw") == 4 * 13 * 13);

  const Bundle b = load_bundle(dir.path / "b1");
  REQUIRE(b.raw.has_value());
  CHECK(b.raw->size() == 8);
  CHECK(b.raw->meta().patch_size == 16);

  ScoreRequest req;
  req.heatmap_dir = dir.path / "heat";
  req.histogram_dir = dir.path / "hist";
  const auto rows = cmd_score(dir.path / "b1", idx.test_images, dir.path / "s1.csv", req);
  cmd_score(dir.path / "b1", idx.test_images, dir.path / "s2.csv");
  CHECK(rows.size() == 6);
  CHECK(bytes_of(dir.path / "s1.csv") == bytes_of(dir.path / "s2.csv"));
  const std::string csv = bytes_of(dir.path / "s1.csv");
  CHECK(csv.rfind("image_path,label,combined,topk_conv4,topk_conv7,topk_conv10,defect_type\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  CHECK(fs::exists(dir.path / "heat/large_000_raw.pgm"));
  CHECK(read_pgm((dir.path / "heat/good_000_raw.pgm").string()).width == 64);
  CHECK(fs::exists(dir.path / "hist/hist_combined.csv"));

  const EvalReport r = cmd_evaluate(dir.path / "s1.csv", dir.path / "r.json", dir.path / "roc.csv");
  CHECK(r.n_normal == 2);
  CHECK(r.n_anomalous == 4);
  CHECK(fs::exists(dir.path / "r.json"));
  CHECK(fs::exists(dir.path / "roc.csv"));
  CHECK(r.auroc == auroc(labeled(rows)));

  SUBCASE("locked keys cannot change at score time") {
    ScoreRequest bad;
    bad.overrides["patch_size"] = "8";
    CHECK_THROWS_WITH_AS(cmd_score(dir.path / "b1", idx.test_images, dir.path / "x.csv", bad),
                         doctest::Contains("config mismatch"), ConfigError);
    bad.overrides = {{"alpha", "0.5"}};
    CHECK_THROWS_AS(cmd_score(dir.path / "b1", idx.test_images, dir.path / "x.csv", bad),
                    ConfigError);
    ScoreRequest same;
    same.overrides["patch_size"] = "16";
    same.overrides["jobs"] = "2";
    CHECK_NOTHROW(cmd_score(dir.path / "b1", idx.test_images, dir.path / "y.csv", same));
    CHECK(bytes_of(dir.path / "y.csv") == bytes_of(dir.path / "s1.csv"));
  }
  SUBCASE("unlabeled images") {
    std::vector<TestImage> loose{{idx.test_images[0].path, false, ""}};
    const auto one = cmd_score(dir.path / "b1", loose, dir.path / "u.csv");
    CHECK(bytes_of(dir.path / "u.csv").find(",unknown,") != std::string::npos);
  }
}

TEST_CASE("mlfsc train and score") {
  oracle::TempDir dir("mlfsc");
  const DatasetIndex& idx = fixture().index;
  const TrainSummary t = cmd_train(mlfsc_config(), idx, dir.path / "b1");
  cmd_train(mlfsc_config(), idx, dir.path / "b2");
  for (const char* tap : {"conv4", "conv7", "conv10"}) {
    const std::string name = std::string("dict_") + tap + ".mlfd";
    CHECK(bytes_of(dir.path / "b1" / name) == bytes_of(dir.path / "b2" / name));
    const auto& trace = t.objective_traces.at(tap);
    for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1] * (1 + 1e-12));
  }
  CHECK(t.training_patches.at("conv10") == 4);
  CHECK(bytes_of(dir.path / "b1/standardizer.json") == bytes_of(dir.path / "b2/standardizer.json"));
  CHECK(bytes_of(dir.path / "b1/config.txt").find(fixture().weights.string()) == std::string::npos);

  const Bundle b = load_bundle(dir.path / "b1");
  CHECK(b.taps.size() == 3);
  CHECK(b.taps.at("conv7").meta().channels == 256);
  CHECK(b.standardizer.layers.size() == 3);

  ScoreRequest req;
  req.weights = fixture().weights.string();
  req.heatmap_dir = dir.path / "heat";
  const auto rows = cmd_score(dir.path / "b1", idx.test_images, dir.path / "s.csv", req);
  REQUIRE(rows.size() == 6);
  for (const auto& r : rows) {
    REQUIRE(r.score.layers.size() == 3);
    CHECK(r.score.combined == doctest::Approx(combine(r.score.layers, b.standardizer)));
  }
  CHECK(fs::exists(dir.path / "heat/small_001_conv10.pgm"));
  CHECK(read_pgm((dir.path / "heat/small_001_conv4.pgm").string()).height == 64);

  SUBCASE("missing weights") {
    const char* saved = std::getenv(kWeightsEnv);
    unsetenv(kWeightsEnv);
    CHECK_THROWS_AS(cmd_score(dir.path / "b1", idx.test_images, dir.path / "x.csv"), ConfigError);
    ScoreRequest missing;
    missing.weights = (dir.path / "nope.mlfw").string();
    CHECK_THROWS_AS(cmd_score(dir.path / "b1", idx.test_images, dir.path / "x.csv", missing), Error);
    setenv(kWeightsEnv, fixture().weights.c_str(), 1);
    CHECK_NOTHROW(cmd_score(dir.path / "b1", idx.test_images, dir.path / "e.csv"));
    CHECK(bytes_of(dir.path / "e.csv") == bytes_of(dir.path / "s.csv"));
    if (saved) setenv(kWeightsEnv, saved, 1); else unsetenv(kWeightsEnv);
  }
  SUBCASE("heatmap command") {
    const auto files = cmd_heatmap(dir.path / "b1", idx.test_images[3].path, dir.path / "one", req);
    CHECK(files.size() == 3);
  }
  SUBCASE("corrupted bundle") {
    fs::remove(dir.path / "b1/dict_conv7.mlfd");
    CHECK_THROWS_WITH_AS(load_bundle(dir.path / "b1"), doctest::Contains("conv7"), Error);
  }
}

TEST_CASE("mlfsc training needs weights and two images") {
  oracle::TempDir dir("needs");
  RunConfig c = mlfsc_config();
  c.weights.clear();
  const char* saved = std::getenv(kWeightsEnv);
  unsetenv(kWeightsEnv);
  CHECK_THROWS_AS(cmd_train(c, fixture().index, dir.path / "b"), ConfigError);
  if (saved) setenv(kWeightsEnv, saved, 1);
  DatasetIndex one = fixture().index;
  one.train_images.resize(1);
  CHECK_THROWS_AS(cmd_train(mlfsc_config(), one, dir.path / "b"), Error);
}
