#include "mlfsc/features.hpp"

#include "binary_io.hpp"
#include "mlfsc/error.hpp"
#include "mlfsc/rng.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>

namespace mlfsc {

namespace {

constexpr char kMagic[4] = {'M', 'L', 'F', 'W'};
constexpr std::uint32_t kVersion = 1;
// Layers (0-based) followed by a 2x2 max pool, and the tap layers.
constexpr int kPoolAfter[] = {1, 3, 6};
constexpr int kTapAfter[] = {3, 6, 9};
// Upper bound on the im2col buffer, in doubles.
constexpr Eigen::Index kIm2colBudget = Eigen::Index{1} << 21;

struct TensorEntry {
  std::vector<std::int64_t> shape;
  std::uint64_t offset = 0;
  std::uint32_t crc = 0;
  std::size_t elements() const {
    std::size_t n = 1;
    for (auto d : shape) n *= static_cast<std::size_t>(d);
    return n;
  }
};

}  // namespace

const FeatureTensor& TapOutputs::operator[](Tap tap) const {
  switch (tap) {
    case Tap::conv4: return conv4;
    case Tap::conv7: return conv7;
    case Tap::conv10: return conv10;
  }
  return conv4;
}

std::string tensor_name(int layer_index, bool bias) {
  return "conv" + std::to_string(layer_index + 1) + (bias ? ".bias" : ".weight");
}

void NetworkPrefix::validate() const {
  if (static_cast<int>(layers.size()) != kConvLayers)
    throw Error("network prefix needs " + std::to_string(kConvLayers) +
                " conv layers, got " + std::to_string(layers.size()));
  for (int i = 0; i < kConvLayers; ++i) {
    const ConvLayer& l = layers[i];
    if (l.in_channels != kChannels[i] || l.out_channels != kChannels[i + 1] ||
        l.weights.size() != static_cast<std::size_t>(l.in_channels) * l.out_channels * 9)
      throw Error("shape mismatch in " + tensor_name(i, false));
    if (l.bias.size() != static_cast<std::size_t>(l.out_channels))
      throw Error("shape mismatch in " + tensor_name(i, true));
    auto finite = [](double v) { return std::isfinite(v); };
    if (!std::all_of(l.weights.begin(), l.weights.end(), finite))
      throw Error("non-finite values in " + tensor_name(i, false));
    if (!std::all_of(l.bias.begin(), l.bias.end(), finite))
      throw Error("non-finite values in " + tensor_name(i, true));
  }
  for (int c = 0; c < 3; ++c)
    if (!(normalization.std[c] > 0.0)) throw Error("normalization std must be > 0");
}

Tensor3 conv3x3_relu(const Tensor3& input, const ConvLayer& layer) {
  if (input.channels != layer.in_channels)
    throw Error("conv: input has " + std::to_string(input.channels) +
                " channels, layer expects " + std::to_string(layer.in_channels));
  const int height = input.height;
  const int width = input.width;
  const Eigen::Index taps = static_cast<Eigen::Index>(input.channels) * 9;
  Tensor3 out(layer.out_channels, height, width);

  // weights are out x (in*9) row-major, i.e. a column-major (in*9) x out matrix.
  const Eigen::Map<const Eigen::MatrixXd> kernel(layer.weights.data(), taps,
                                                 layer.out_channels);
  const int rows_per_block = static_cast<int>(std::clamp<Eigen::Index>(
      kIm2colBudget / (taps * width), 1, height));

  Eigen::MatrixXd columns;
  Eigen::MatrixXd result;
  for (int y0 = 0; y0 < height; y0 += rows_per_block) {
    const int rows = std::min(rows_per_block, height - y0);
    const Eigen::Index positions = static_cast<Eigen::Index>(rows) * width;
    columns.resize(positions, taps);
    for (int c = 0; c < input.channels; ++c) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          double* dst = columns.col((c * 3 + ky) * 3 + kx).data();
          for (int r = 0; r < rows; ++r, dst += width) {
            const int sy = y0 + r + ky - 1;
            if (sy < 0 || sy >= height) {
              std::fill(dst, dst + width, 0.0);
              continue;
            }
            const double* src = &input.data[(static_cast<std::size_t>(c) * height + sy) * width];
            for (int x = 0; x < width; ++x) {
              const int sx = x + kx - 1;
              dst[x] = (sx >= 0 && sx < width) ? src[sx] : 0.0;
            }
          }
        }
      }
    }
    result.noalias() = columns * kernel;
    for (int o = 0; o < layer.out_channels; ++o) {
      const double* src = result.col(o).data();
      double* dst = &out.data[(static_cast<std::size_t>(o) * height + y0) * width];
      const double b = layer.bias[o];
      for (Eigen::Index i = 0; i < positions; ++i) dst[i] = std::max(0.0, src[i] + b);
    }
  }
  return out;
}

Tensor3 max_pool2x2(const Tensor3& input) {
  Tensor3 out(input.channels, input.height / 2, input.width / 2);
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = std::max({input.at(c, 2 * y, 2 * x), input.at(c, 2 * y, 2 * x + 1),
                                    input.at(c, 2 * y + 1, 2 * x),
                                    input.at(c, 2 * y + 1, 2 * x + 1)});
  return out;
}

TapOutputs forward(const NetworkPrefix& net, const Image& image) {
  if (image.channels != 3)
    throw Error("feature extraction needs a 3-channel image, got " +
                std::to_string(image.channels));
  if (image.height < 8 || image.width < 8 || image.height % 8 != 0 || image.width % 8 != 0)
    throw Error("feature extraction needs dimensions divisible by 8, got " +
                std::to_string(image.height) + "x" + std::to_string(image.width));
  if (static_cast<int>(net.layers.size()) != NetworkPrefix::kConvLayers)
    throw Error("network prefix is not loaded");

  Tensor3 x = image;
  for (int c = 0; c < 3; ++c) {
    const double mean = net.normalization.mean[c];
    const double inv_std = 1.0 / net.normalization.std[c];
    const std::size_t plane = x.plane_size();
    for (std::size_t i = 0; i < plane; ++i) {
      double& v = x.data[c * plane + i];
      v = (v - mean) * inv_std;
    }
  }

  TapOutputs taps;
  FeatureTensor* slots[] = {&taps.conv4, &taps.conv7, &taps.conv10};
  int next_tap = 0;
  for (int i = 0; i < NetworkPrefix::kConvLayers; ++i) {
    x = conv3x3_relu(x, net.layers[i]);
    if (next_tap < 3 && i == kTapAfter[next_tap]) {
      static_cast<Tensor3&>(*slots[next_tap]) = x;
      slots[next_tap]->tap = kAllTaps[next_tap];
      ++next_tap;
    }
    if (std::find(std::begin(kPoolAfter), std::end(kPoolAfter), i) != std::end(kPoolAfter))
      x = max_pool2x2(x);
  }
  return taps;
}

NetworkPrefix random_network(std::uint64_t seed) {
  NetworkPrefix net;
  for (int i = 0; i < NetworkPrefix::kConvLayers; ++i) {
    ConvLayer layer;
    layer.in_channels = NetworkPrefix::kChannels[i];
    layer.out_channels = NetworkPrefix::kChannels[i + 1];
    layer.weights.resize(static_cast<std::size_t>(layer.in_channels) * layer.out_channels * 9);
    layer.bias.assign(layer.out_channels, 0.0);
    Rng rng = make_rng(seed, "weights/" + tensor_name(i, false));
    const double scale = std::sqrt(2.0 / (9.0 * layer.in_channels));
    // Stored weights are f32, so round now to keep save/load lossless.
    for (double& w : layer.weights)
      w = static_cast<float>(scale * standard_normal(rng));
    net.layers.push_back(std::move(layer));
  }
  return net;
}

double golden_max_deviation(const NetworkPrefix& net) {
  if (!net.golden) throw Error("weights file carries no golden block");
  Image input;
  static_cast<Tensor3&>(input) = net.golden->input;
  const TapOutputs taps = forward(net, input);
  double worst = 0.0;
  for (int t = 0; t < 3; ++t) {
    const Tensor3& actual = taps[kAllTaps[t]];
    const Tensor3& expected = net.golden->expected[t];
    if (actual.channels != expected.channels || actual.height != expected.height ||
        actual.width != expected.width)
      throw Error("golden " + std::string(tap_name(kAllTaps[t])) + " has the wrong shape");
    for (std::size_t i = 0; i < actual.data.size(); ++i)
      worst = std::max(worst, std::abs(actual.data[i] - expected.data[i]));
  }
  return worst;
}

void save_weights(const NetworkPrefix& net, const std::string& path) {
  net.validate();
  std::vector<char> payload;
  nlohmann::json tensors = nlohmann::json::array();
  auto append = [&](const std::string& name, const std::vector<std::int64_t>& shape,
                    const std::vector<double>& values) {
    std::vector<float> narrow(values.begin(), values.end());
    const std::vector<char> bytes = binary::to_bytes<float>(narrow);
    tensors.push_back({{"name", name},
                       {"dtype", "f32"},
                       {"shape", shape},
                       {"offset", payload.size()},
                       {"crc32", binary::crc32_of(bytes)}});
    payload.insert(payload.end(), bytes.begin(), bytes.end());
  };
  for (int i = 0; i < NetworkPrefix::kConvLayers; ++i) {
    const ConvLayer& l = net.layers[i];
    append(tensor_name(i, false), {l.out_channels, l.in_channels, 3, 3}, l.weights);
    append(tensor_name(i, true), {l.out_channels}, l.bias);
  }
  nlohmann::json manifest = {
      {"tensors", tensors},
      {"normalization",
       {{"mean", net.normalization.mean}, {"std", net.normalization.std}}}};
  if (net.golden) {
    const auto shape_of = [](const Tensor3& t) {
      return std::vector<std::int64_t>{t.channels, t.height, t.width};
    };
    append("golden.input", shape_of(net.golden->input), net.golden->input.data);
    std::vector<std::string> names;
    for (int t = 0; t < 3; ++t) {
      names.push_back("golden." + std::string(tap_name(kAllTaps[t])));
      append(names.back(), shape_of(net.golden->expected[t]), net.golden->expected[t].data);
    }
    manifest["tensors"] = tensors;
    manifest["golden"] = {{"input", "golden.input"}, {"taps", names}};
  }
  const std::string text = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  binary::write_pod<std::uint32_t>(out, kVersion);
  binary::write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("failed writing " + path);
}

NetworkPrefix load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open weights file " + path);
  char magic[4] = {};
  in.read(magic, sizeof(magic));
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kMagic))
    throw Error(path + ": not a weights file (bad magic)");
  const auto version = binary::read_pod<std::uint32_t>(in, path);
  if (version != kVersion)
    throw Error(path + ": unsupported weights version " + std::to_string(version));
  const auto manifest_len = binary::read_pod<std::uint64_t>(in, path);
  const std::vector<char> manifest_bytes = binary::read_bytes(in, manifest_len);
  if (manifest_bytes.size() != manifest_len) throw Error(path + ": truncated manifest");
  const std::vector<char> payload{std::istreambuf_iterator<char>(in),
                                  std::istreambuf_iterator<char>()};

  std::map<std::string, TensorEntry> entries;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_bytes.begin(), manifest_bytes.end());
    for (const auto& t : manifest.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      if (t.at("dtype").get<std::string>() != "f32")
        throw Error(path + ": tensor " + name + " is not f32");
      entries[name] = {t.at("shape").get<std::vector<std::int64_t>>(),
                       t.at("offset").get<std::uint64_t>(),
                       t.at("crc32").get<std::uint32_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": malformed manifest: " + e.what());
  }

  auto read_tensor = [&](const std::string& name,
                         const std::vector<std::int64_t>* expected_shape) {
    const auto it = entries.find(name);
    if (it == entries.end()) throw Error(path + ": missing tensor " + name);
    const TensorEntry& e = it->second;
    if (expected_shape && e.shape != *expected_shape)
      throw Error(path + ": shape mismatch in tensor " + name);
    const std::size_t bytes = e.elements() * sizeof(float);
    if (e.offset + bytes > payload.size())
      throw Error(path + ": tensor " + name + " extends past the end of the file");
    const std::span<const char> raw(payload.data() + e.offset, bytes);
    if (binary::crc32_of(raw) != e.crc) throw Error(path + ": checksum mismatch in tensor " + name);
    std::vector<float> narrow(e.elements());
    std::memcpy(narrow.data(), raw.data(), bytes);
    return std::make_pair(std::vector<double>(narrow.begin(), narrow.end()), e.shape);
  };

  NetworkPrefix net;
  for (int i = 0; i < NetworkPrefix::kConvLayers; ++i) {
    ConvLayer layer;
    layer.in_channels = NetworkPrefix::kChannels[i];
    layer.out_channels = NetworkPrefix::kChannels[i + 1];
    const std::vector<std::int64_t> wshape{layer.out_channels, layer.in_channels, 3, 3};
    const std::vector<std::int64_t> bshape{layer.out_channels};
    layer.weights = read_tensor(tensor_name(i, false), &wshape).first;
    layer.bias = read_tensor(tensor_name(i, true), &bshape).first;
    net.layers.push_back(std::move(layer));
  }
  try {
    const auto& norm = manifest.at("normalization");
    net.normalization.mean = norm.at("mean").get<std::array<double, 3>>();
    net.normalization.std = norm.at("std").get<std::array<double, 3>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": missing normalization constants: " + e.what());
  }
  if (manifest.contains("golden")) {
    const auto to_tensor = [](std::pair<std::vector<double>, std::vector<std::int64_t>> t) {
      if (t.second.size() != 3) throw Error("golden tensors must be C x H x W");
      Tensor3 out(static_cast<int>(t.second[0]), static_cast<int>(t.second[1]),
                  static_cast<int>(t.second[2]));
      out.data = std::move(t.first);
      return out;
    };
    try {
      const auto& g = manifest.at("golden");
      GoldenBlock golden;
      golden.input = to_tensor(read_tensor(g.at("input").get<std::string>(), nullptr));
      const auto names = g.at("taps").get<std::vector<std::string>>();
      if (names.size() != 3) throw Error(path + ": golden block needs three taps");
      for (int t = 0; t < 3; ++t) golden.expected[t] = to_tensor(read_tensor(names[t], nullptr));
      net.golden = std::move(golden);
    } catch (const nlohmann::json::exception& e) {
      throw Error(path + ": malformed golden block: " + e.what());
    }
  }
  net.validate();
  return net;
}

}  // namespace mlfsc
