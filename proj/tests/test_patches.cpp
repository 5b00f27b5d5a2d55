#include "mlfsc/error.hpp"
#include "mlfsc/patches.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace mlfsc;

namespace {

Tensor3 random_tensor(std::mt19937_64& gen, int c, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor3 t(c, h, w);
  for (double& v : t.data) v = u(gen);
  return t;
}

}  // namespace

TEST_CASE("4x4 image, p=2, s=2 tiles exactly") {
  Image img(1, 4, 4);
  for (int i = 0; i < 16; ++i) img.data[static_cast<std::size_t>(i)] = i;
  const PatchMatrix pm = extract_patches(img, 2, 2, false);
  CHECK(pm.dim() == 4);
  CHECK(pm.count() == 4);
  CHECK(pm.grid == PatchGrid{2, 2});
  // Second patch (row 0, col 1): pixels 2, 3, 6, 7 row-major.
  CHECK(pm.columns(0, 1) == 2);
  CHECK(pm.columns(1, 1) == 3);
  CHECK(pm.columns(2, 1) == 6);
  CHECK(pm.columns(3, 1) == 7);
}

TEST_CASE("patch counts for the working resolutions") {
  CHECK(window_count(224, 16, 4) == 53);
  Image img(1, 224, 224, 0.5);
  CHECK(extract_patches(img, 16, 4, true).count() == 2809);

  Tensor3 feat(128, 112, 112, 0.0);
  const PatchSampler sampler(feat, 8, 2, false);
  CHECK(sampler.dim() == 8 * 8 * 128);
  CHECK(sampler.count() == 53u * 53u);
}

TEST_CASE("window count formula agrees with enumeration") {
  for (int L = 1; L <= 40; ++L)
    for (int p = 1; p <= L; ++p)
      for (int s = 1; s <= 9; ++s) CHECK(window_count(L, p, s) == oracle::count_windows(L, p, s));
}

TEST_CASE("patches are flattened channel-major then row-major") {
  std::mt19937_64 gen(1);
  const Tensor3 t = random_tensor(gen, 3, 9, 7);
  const PatchMatrix pm = extract_patches(t, 3, 2, false, "conv4");
  CHECK(pm.grid == PatchGrid{4, 3});
  CHECK(pm.source == "conv4");
  for (int r = 0; r < pm.grid.rows; ++r)
    for (int c = 0; c < pm.grid.cols; ++c) {
      Eigen::Index k = 0;
      for (int ch = 0; ch < 3; ++ch)
        for (int dy = 0; dy < 3; ++dy)
          for (int dx = 0; dx < 3; ++dx)
            CHECK(pm.columns(k++, r * 3 + c) == t.at(ch, r * 2 + dy, c * 2 + dx));
    }
}

TEST_CASE("mean subtraction centres every column") {
  std::mt19937_64 gen(2);
  const Tensor3 t = random_tensor(gen, 2, 20, 20);
  const PatchMatrix pm = extract_patches(t, 5, 3, true);
  REQUIRE(pm.mean_removed());
  CHECK(pm.means.size() == static_cast<std::size_t>(pm.count()));
  for (Eigen::Index j = 0; j < pm.count(); ++j) CHECK(std::abs(pm.columns.col(j).mean()) < 1e-12);
  const PatchMatrix raw = extract_patches(t, 5, 3, false);
  for (Eigen::Index j = 0; j < pm.count(); ++j)
    CHECK((pm.columns.col(j).array() + pm.means[static_cast<std::size_t>(j)] -
           raw.columns.col(j).array()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("sampler gather equals the materialized column") {
  std::mt19937_64 gen(3);
  const Tensor3 t = random_tensor(gen, 4, 17, 13);
  const PatchMatrix pm = extract_patches(t, 4, 3, true);
  const PatchSampler sampler(t, 4, 3, true);
  Eigen::VectorXd buf(sampler.dim());
  for (std::size_t i = 0; i < sampler.count(); ++i) {
    const double mean = sampler.gather(i, {buf.data(), static_cast<std::size_t>(buf.size())});
    CHECK(buf == pm.columns.col(static_cast<Eigen::Index>(i)));
    CHECK(mean == pm.means[i]);
  }
}

TEST_CASE("non-overlapping extraction round-trips") {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = 1 + trial % 3, p = 1 + trial % 5;
    const Tensor3 t = random_tensor(gen, c, 11 + trial, 9 + 2 * trial);
    const Tensor3 back = assemble_patches(extract_patches(t, p, p, false));
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < back.height; ++y)
        for (int x = 0; x < back.width; ++x) CHECK(back.at(ch, y, x) == t.at(ch, y, x));
    CHECK(back.height == (t.height / p) * p);
    CHECK(back.width == (t.width / p) * p);
  }
  CHECK_THROWS_AS(assemble_patches(extract_patches(Image(1, 4, 4), 2, 1, false)), Error);
}

TEST_CASE("extraction errors") {
  CHECK_THROWS_WITH_AS(extract_patches(Image(1, 10, 20), 16, 4, true),
                       doctest::Contains("source too small"), Error);
  Image bad(1, 8, 8, 0.5);
  bad.at(0, 3, 3) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(extract_patches(bad, 4, 2, false), Error);
  CHECK_THROWS_AS(extract_patches(Image(1, 8, 8), 4, 0, false), Error);
}

TEST_CASE("heatmap of a single covering patch is all zeros") {
  const std::vector<double> e{3.5};
  const Image map = patch_grid_to_heatmap(e, {1, 1}, 6, 6, 6, 1);
  for (double v : map.data) CHECK(v == 0.0);
}

TEST_CASE("heatmap of a 2x2 grid marks the bottom-right quadrant") {
  const std::vector<double> e{0, 0, 0, 1};
  const Image map = patch_grid_to_heatmap(e, {2, 2}, 4, 4, 2, 2);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) CHECK(map.at(0, y, x) == (y >= 2 && x >= 2 ? 1.0 : 0.0));
}

TEST_CASE("overlapping heatmap equals the per-pixel brute force") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (int trial = 0; trial < 30; ++trial) {
    const int p = 2 + trial % 4, s = 1 + trial % 3;
    const int H = p + s * (trial % 5) + trial % 2, W = p + s * (trial % 4) + 1;
    const int rows = window_count(H, p, s), cols = window_count(W, p, s);
    std::vector<double> e(static_cast<std::size_t>(rows) * cols);
    for (double& v : e) v = u(gen);
    const Image map = patch_grid_to_heatmap(e, {rows, cols}, H, W, p, s);
    const auto want = oracle::brute_heatmap(e, rows, cols, H, W, p, s);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(map.data[i] == doctest::Approx(want[i]));
  }
  CHECK_THROWS_AS(patch_grid_to_heatmap(std::vector<double>(3), {2, 2}, 4, 4, 2, 2), Error);
}

TEST_CASE("receptive fields of the taps") {
  CHECK(receptive_field(Tap::conv4).size == 14);
  CHECK(receptive_field(Tap::conv4).jump == 2);
  CHECK(receptive_field(Tap::conv4).patch_span(8) == 28);
  CHECK(receptive_field(Tap::conv7).size == 40);
  CHECK(receptive_field(Tap::conv7).jump == 4);
  CHECK(receptive_field(Tap::conv7).patch_span(8) == 68);
  CHECK(receptive_field("conv10").size == 92);
  CHECK(receptive_field("conv10").jump == 8);
  CHECK(receptive_field("conv10").patch_span(8) == 148);
  CHECK(receptive_field(Tap::conv4).size < receptive_field(Tap::conv7).size);
  CHECK(receptive_field(Tap::conv7).size < receptive_field(Tap::conv10).size);
  CHECK_THROWS_AS(receptive_field("conv5"), Error);
}

TEST_CASE("receptive field recurrence from the layer list") {
  // conv conv pool conv conv(4) pool conv conv conv(7) pool conv conv conv(10)
  const char* layers = "ccpccpcccpccc";
  int rf = 1, jump = 1, conv = 0;
  for (const char* l = layers; *l; ++l) {
    if (*l == 'p') {
      rf += jump;
      jump *= 2;
      continue;
    }
    rf += 2 * jump;
    ++conv;
    if (conv == 4) CHECK(rf == receptive_field(Tap::conv4).size);
    if (conv == 7) CHECK(rf == receptive_field(Tap::conv7).size);
    if (conv == 10) CHECK(rf == receptive_field(Tap::conv10).size);
  }
}

TEST_CASE("PGM round trip at 8-bit precision") {
  oracle::TempDir dir("pgm");
  Image img(1, 5, 7);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(i) / 34.0;
  write_pgm(dir / "a.pgm", img);
  const Image back = read_pgm(dir / "a.pgm");
  REQUIRE(back.height == 5);
  REQUIRE(back.width == 7);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5 / 255.0 + 1e-12);
}

TEST_CASE("nearest upscale replicates cells") {
  Image img(1, 2, 2);
  img.data = {1, 2, 3, 4};
  const Image up = upscale_nearest(img, 3);
  CHECK(up.height == 6);
  CHECK(up.at(0, 5, 5) == 4);
  CHECK(up.at(0, 2, 3) == 2);
}
