#include "mlfsc/error.hpp"
#include "mlfsc/features.hpp"
#include "oracles.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

using namespace mlfsc;

namespace {

Image random_image(std::mt19937_64& gen, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(3, h, w);
  for (double& v : img.data) v = u(gen);
  return img;
}

double max_abs_diff(const Tensor3& a, const Tensor3& b) {
  REQUIRE(a.channels == b.channels);
  REQUIRE(a.height == b.height);
  REQUIRE(a.width == b.width);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  return worst;
}

std::vector<char> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::string& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// Rewrites a weights file with an edited manifest, keeping the payload.
void rewrite_manifest(const std::string& in_path, const std::string& out_path,
                      const std::function<void(nlohmann::json&)>& edit) {
  const auto bytes = slurp(in_path);
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  auto manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(len));
  edit(manifest);
  const std::string text = manifest.dump();
  std::vector<char> out(bytes.begin(), bytes.begin() + 8);
  const std::uint64_t new_len = text.size();
  out.insert(out.end(), reinterpret_cast<const char*>(&new_len),
             reinterpret_cast<const char*>(&new_len) + 8);
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), bytes.begin() + 16 + static_cast<long>(len), bytes.end());
  spit(out_path, out);
}

}  // namespace

TEST_CASE("single conv layer agrees with the six-loop oracle") {
  std::mt19937_64 gen(1);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto [in, out, h, w] : {std::array{3, 5, 8, 8}, std::array{4, 2, 7, 11}, std::array{1, 1, 1, 1}}) {
    ConvLayer layer{in, out, std::vector<double>(static_cast<std::size_t>(in) * out * 9),
                    std::vector<double>(static_cast<std::size_t>(out))};
    for (double& v : layer.weights) v = n(gen);
    for (double& v : layer.bias) v = n(gen);
    Tensor3 x(in, h, w);
    for (double& v : x.data) v = n(gen);
    CHECK(max_abs_diff(conv3x3_relu(x, layer), oracle::conv3x3_relu(x, out, layer.weights, layer.bias)) <= 1e-12);
  }
}

TEST_CASE("delta kernel passes the ReLU of the input through") {
  ConvLayer layer{2, 1, std::vector<double>(18, 0.0), {0.0}};
  layer.weights[4] = 1.0;       // channel 0 centre
  layer.weights[9 + 4] = 1.0;   // channel 1 centre
  std::mt19937_64 gen(2);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor3 x(2, 6, 5);
  for (double& v : x.data) v = n(gen);
  const Tensor3 y = conv3x3_relu(x, layer);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 5; ++c) CHECK(y.at(0, r, c) == std::max(0.0, x.at(0, r, c) + x.at(1, r, c)));
}

TEST_CASE("max pool agrees with the oracle") {
  std::mt19937_64 gen(3);
  Tensor3 x(3, 6, 8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : x.data) v = n(gen);
  CHECK(max_abs_diff(max_pool2x2(x), oracle::max_pool(x)) == 0.0);
}

TEST_CASE("full prefix matches the direct-convolution oracle on 16x16 inputs") {
  const NetworkPrefix net = random_network(7);
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 2; ++trial) {
    const Image img = random_image(gen, 16, 16);
    const TapOutputs taps = forward(net, img);
    const auto want = oracle::reference_forward(net, img);
    for (int t = 0; t < 3; ++t) CHECK(max_abs_diff(taps[kAllTaps[t]], want[t]) <= 1e-6);
  }
}

TEST_CASE("tap shapes for a 224x224 input") {
  const NetworkPrefix net = random_network(1);
  Image img(3, 224, 224, 0.5);
  const TapOutputs taps = forward(net, img);
  CHECK(taps.conv4.channels == 128);
  CHECK(taps.conv4.height == 112);
  CHECK(taps.conv4.width == 112);
  CHECK(taps.conv7.channels == 256);
  CHECK(taps.conv7.height == 56);
  CHECK(taps.conv7.width == 56);
  CHECK(taps.conv10.channels == 512);
  CHECK(taps.conv10.height == 28);
  CHECK(taps.conv10.width == 28);
  CHECK(taps.conv4.tap == Tap::conv4);
  CHECK(taps.conv10.tap == Tap::conv10);
}

TEST_CASE("taps are non-negative and deterministic") {
  const NetworkPrefix net = random_network(2);
  std::mt19937_64 gen(5);
  const Image img = random_image(gen, 32, 24);
  const TapOutputs a = forward(net, img);
  const TapOutputs b = forward(net, img);
  for (Tap t : kAllTaps) {
    CHECK(a[t].data == b[t].data);
    for (double v : a[t].data) CHECK(v >= 0.0);
  }
}

TEST_CASE("an 8-pixel shift moves interior conv10 cells by one") {
  const NetworkPrefix net = random_network(3);
  std::mt19937_64 gen(6);
  const Image wide = random_image(gen, 160, 168);
  Image a(3, 160, 160), b(3, 160, 160);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 160; ++y)
      for (int x = 0; x < 160; ++x) {
        a.at(c, y, x) = wide.at(c, y, x);
        b.at(c, y, x) = wide.at(c, y, x + 8);
      }
  const FeatureTensor fa = forward(net, a).conv10;
  const FeatureTensor fb = forward(net, b).conv10;
  double worst = 0.0;
  for (int ch = 0; ch < 512; ++ch)
    for (int y = 6; y <= 13; ++y)
      for (int x = 6; x <= 12; ++x) worst = std::max(worst, std::abs(fb.at(ch, y, x) - fa.at(ch, y, x + 1)));
  CHECK(worst <= 1e-9);
}

TEST_CASE("forward input checks") {
  const NetworkPrefix net = random_network(4);
  CHECK_THROWS_WITH_AS(forward(net, Image(1, 16, 16)), doctest::Contains("3-channel"), Error);
  CHECK_THROWS_AS(forward(net, Image(3, 20, 16)), Error);
  CHECK_THROWS_AS(forward(NetworkPrefix{}, Image(3, 16, 16)), Error);
}

TEST_CASE("He initialisation has the expected spread") {
  const NetworkPrefix net = random_network(5);
  REQUIRE(net.layers.size() == 10);
  const auto& w = net.layers[9].weights;
  double sq = 0.0;
  for (double v : w) sq += v * v;
  CHECK(sq / static_cast<double>(w.size()) == doctest::Approx(2.0 / (9.0 * 512)).epsilon(0.02));
  CHECK(!(random_network(5).layers[0].weights == random_network(6).layers[0].weights));
}

TEST_CASE("weights file round trip with golden block") {
  oracle::TempDir dir("weights");
  NetworkPrefix net = random_network(8);
  std::mt19937_64 gen(7);
  Image input = random_image(gen, 64, 64);
  for (double& v : input.data) v = static_cast<float>(v);
  net.normalization.mean = {0.5, 0.25, 0.125};
  const TapOutputs taps = forward(net, input);
  net.golden = GoldenBlock{input, {taps.conv4, taps.conv7, taps.conv10}};
  save_weights(net, dir / "w.mlfw");

  const NetworkPrefix back = load_weights(dir / "w.mlfw");
  REQUIRE(back.layers.size() == 10);
  for (int i = 0; i < 10; ++i) {
    CHECK(back.layers[i].weights == net.layers[i].weights);
    CHECK(back.layers[i].bias == net.layers[i].bias);
  }
  CHECK(back.normalization.mean == net.normalization.mean);
  REQUIRE(back.golden.has_value());
  CHECK(golden_max_deviation(back) <= 1e-4);

  const auto bytes = slurp(dir / "w.mlfw");
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, 8);
  const auto manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(len));
  CHECK(manifest.at("tensors").size() == 24);  // 20 layer tensors + 4 golden
  CHECK(manifest.at("golden").at("taps").size() == 3);
}

TEST_CASE("weights file errors name the offending tensor") {
  oracle::TempDir dir("weightsbad");
  save_weights(random_network(9), dir / "w.mlfw");

  SUBCASE("missing conv10.bias") {
    rewrite_manifest(dir / "w.mlfw", dir / "m.mlfw", [](nlohmann::json& m) {
      auto& t = m.at("tensors");
      for (auto it = t.begin(); it != t.end(); ++it)
        if (it->at("name") == "conv10.bias") {
          t.erase(it);
          break;
        }
    });
    CHECK_THROWS_WITH_AS(load_weights(dir / "m.mlfw"), doctest::Contains("conv10.bias"), Error);
  }
  SUBCASE("shape mismatch") {
    rewrite_manifest(dir / "w.mlfw", dir / "s.mlfw", [](nlohmann::json& m) {
      for (auto& t : m.at("tensors"))
        if (t.at("name") == "conv3.weight") t["shape"] = {128, 64, 3, 2};
    });
    CHECK_THROWS_WITH_AS(load_weights(dir / "s.mlfw"), doctest::Contains("conv3.weight"), Error);
  }
  SUBCASE("corrupted payload byte") {
    auto bytes = slurp(dir / "w.mlfw");
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, 8);
    bytes[16 + len + 100] ^= 0x01;  // inside conv1.weight
    spit(dir / "c.mlfw", bytes);
    CHECK_THROWS_WITH_AS(load_weights(dir / "c.mlfw"), doctest::Contains("checksum mismatch in tensor conv1.weight"), Error);
  }
  SUBCASE("bad magic") {
    spit(dir / "x.mlfw", {'M', 'L', 'F', 'D', 1, 0, 0, 0});
    CHECK_THROWS_AS(load_weights(dir / "x.mlfw"), Error);
  }
  CHECK_THROWS_AS(golden_max_deviation(random_network(1)), Error);
}
