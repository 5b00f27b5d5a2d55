#pragma once

#include "mlfsc/patches.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mlfsc {

// 3x3 convolution, stride 1, zero padding 1. weights: out x in x 3 x 3.
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<double> weights;
  std::vector<double> bias;
};

struct Normalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};
};

// Reference input/activation pair carried inside a weights file.
struct GoldenBlock {
  Tensor3 input;                     // 3 x H x W in [0, 1]
  std::array<Tensor3, 3> expected;   // conv4, conv7, conv10
};

struct TapOutputs {
  FeatureTensor conv4;
  FeatureTensor conv7;
  FeatureTensor conv10;

  const FeatureTensor& operator[](Tap tap) const;
};

// The first ten conv layers of VGG16:
//   conv1 conv2 pool | conv3 conv4* pool | conv5 conv6 conv7* pool |
//   conv8 conv9 conv10*
// with channel chain 3-64-64-128-128-256-256-256-512-512-512. Immutable once
// built; forward() may be called from several threads.
struct NetworkPrefix {
  static constexpr int kConvLayers = 10;
  static constexpr std::array<int, kConvLayers + 1> kChannels = {
      3, 64, 64, 128, 128, 256, 256, 256, 512, 512, 512};

  std::vector<ConvLayer> layers;
  Normalization normalization;
  std::optional<GoldenBlock> golden;

  // Throws mlfsc::Error naming the first inconsistent tensor.
  void validate() const;
};

// conv -> +bias -> ReLU. Input must have layer.in_channels planes.
Tensor3 conv3x3_relu(const Tensor3& input, const ConvLayer& layer);
Tensor3 max_pool2x2(const Tensor3& input);

// Normalizes per channel, then runs the prefix. Taps are post-ReLU, pre-pool.
// For an H x W input (both divisible by 8) the taps are
// 128 x H/2 x W/2, 256 x H/4 x W/4 and 512 x H/8 x W/8.
TapOutputs forward(const NetworkPrefix& net, const Image& image);

// He-normal weights, zero bias, seeded. Stands in for pretrained weights when
// none are available; the result is a valid prefix with no golden block.
NetworkPrefix random_network(std::uint64_t seed);

// Max |actual - expected| over the three golden taps. Throws if the network
// carries no golden block.
double golden_max_deviation(const NetworkPrefix& net);

// "MLFW" format: magic, u32 version, u64 manifest length, JSON manifest, raw
// little-endian f32 tensors at the manifest offsets (relative to the payload
// start), each with its own CRC32.
NetworkPrefix load_weights(const std::string& path);
void save_weights(const NetworkPrefix& net, const std::string& path);

// Name used in the weights manifest, e.g. "conv10.bias".
std::string tensor_name(int layer_index, bool bias);

}  // namespace mlfsc
