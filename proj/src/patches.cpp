#include "mlfsc/patches.hpp"

#include "mlfsc/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace mlfsc {

bool Tensor3::all_finite() const {
  return std::all_of(data.begin(), data.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string_view tap_name(Tap tap) {
  switch (tap) {
    case Tap::conv4: return "conv4";
    case Tap::conv7: return "conv7";
    case Tap::conv10: return "conv10";
  }
  return "conv4";
}

Tap tap_from_string(std::string_view name) {
  for (Tap tap : kAllTaps)
    if (tap_name(tap) == name) return tap;
  throw Error("unknown tap '" + std::string(name) +
              "' (expected conv4, conv7 or conv10)");
}

int window_count(int length, int patch_size, int stride) {
  if (patch_size <= 0 || stride <= 0 || length < patch_size) return 0;
  return (length - patch_size) / stride + 1;
}

PatchSampler::PatchSampler(const Tensor3& source, int patch_size, int stride,
                           bool subtract_mean)
    : source_(&source), patch_size_(patch_size), stride_(stride),
      subtract_mean_(subtract_mean) {
  if (patch_size < 1) throw Error("patch size must be >= 1");
  if (stride < 1) throw Error("stride must be >= 1");
  if (source.channels < 1) throw Error("source has no channels");
  if (source.height < patch_size || source.width < patch_size)
    throw Error("source too small: " + std::to_string(source.height) + "x" +
                std::to_string(source.width) + " for patch size " +
                std::to_string(patch_size));
  if (!source.all_finite()) throw Error("source contains non-finite values");
  grid_ = {window_count(source.height, patch_size, stride),
           window_count(source.width, patch_size, stride)};
  dim_ = static_cast<Eigen::Index>(patch_size) * patch_size * source.channels;
}

double PatchSampler::gather(std::size_t index, std::span<double> out) const {
  const int r = static_cast<int>(index / grid_.cols);
  const int c = static_cast<int>(index % grid_.cols);
  const int y0 = r * stride_;
  const int x0 = c * stride_;
  const Tensor3& src = *source_;
  std::size_t k = 0;
  for (int ch = 0; ch < src.channels; ++ch) {
    for (int dy = 0; dy < patch_size_; ++dy) {
      const double* row = &src.data[(static_cast<std::size_t>(ch) * src.height +
                                     y0 + dy) * src.width + x0];
      std::copy(row, row + patch_size_, out.begin() + k);
      k += patch_size_;
    }
  }
  if (!subtract_mean_) return 0.0;
  double mean = 0.0;
  for (std::size_t i = 0; i < k; ++i) mean += out[i];
  mean /= static_cast<double>(k);
  for (std::size_t i = 0; i < k; ++i) out[i] -= mean;
  return mean;
}

PatchMatrix extract_patches(const Tensor3& source, int patch_size, int stride,
                            bool subtract_mean, std::string source_tag) {
  PatchSampler sampler(source, patch_size, stride, subtract_mean);
  PatchMatrix pm;
  pm.grid = sampler.grid();
  pm.patch_size = patch_size;
  pm.stride = stride;
  pm.channels = source.channels;
  pm.source = std::move(source_tag);
  pm.columns.resize(sampler.dim(), static_cast<Eigen::Index>(sampler.count()));
  if (subtract_mean) pm.means.resize(sampler.count());
  for (std::size_t i = 0; i < sampler.count(); ++i) {
    const double mean = sampler.gather(
        i, {pm.columns.col(static_cast<Eigen::Index>(i)).data(),
            static_cast<std::size_t>(sampler.dim())});
    if (subtract_mean) pm.means[i] = mean;
  }
  return pm;
}

Tensor3 assemble_patches(const PatchMatrix& patches) {
  if (patches.stride != patches.patch_size || patches.mean_removed())
    throw Error("assemble_patches needs non-overlapping patches without mean removal");
  const int p = patches.patch_size;
  Tensor3 out(patches.channels, patches.grid.rows * p, patches.grid.cols * p);
  for (int r = 0; r < patches.grid.rows; ++r) {
    for (int c = 0; c < patches.grid.cols; ++c) {
      const auto col = patches.columns.col(r * patches.grid.cols + c);
      Eigen::Index k = 0;
      for (int ch = 0; ch < patches.channels; ++ch)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx) out.at(ch, r * p + dy, c * p + dx) = col(k++);
    }
  }
  return out;
}

Image patch_grid_to_heatmap(std::span<const double> errors, PatchGrid grid,
                            int height, int width, int patch_size, int stride) {
  if (errors.size() != grid.count())
    throw Error("heatmap: " + std::to_string(errors.size()) +
                " errors for a " + std::to_string(grid.rows) + "x" +
                std::to_string(grid.cols) + " patch grid");
  if ((grid.rows - 1) * stride + patch_size > height ||
      (grid.cols - 1) * stride + patch_size > width)
    throw Error("heatmap: patch grid exceeds the source size");

  constexpr double kUnset = -std::numeric_limits<double>::infinity();
  Image map(1, height, width, kUnset);
  for (int r = 0; r < grid.rows; ++r) {
    for (int c = 0; c < grid.cols; ++c) {
      const double e = errors[static_cast<std::size_t>(r) * grid.cols + c];
      for (int y = r * stride; y < r * stride + patch_size; ++y)
        for (int x = c * stride; x < c * stride + patch_size; ++x)
          map.at(0, y, x) = std::max(map.at(0, y, x), e);
    }
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : map.data) {
    if (v == kUnset) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  // Uncovered border pixels take the minimum.
  for (double& v : map.data) {
    if (v == kUnset) v = lo;
    v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
  }
  return map;
}

Image upscale_nearest(const Image& image, int factor) {
  if (factor < 1) throw Error("upscale factor must be >= 1");
  Image out(image.channels, image.height * factor, image.width * factor);
  for (int c = 0; c < out.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = image.at(c, y / factor, x / factor);
  return out;
}

ReceptiveField receptive_field(Tap tap) {
  // conv: rf += (k - 1) * jump with k = 3; 2x2/2 pool: rf += jump, jump *= 2.
  constexpr int kConvsPerBlock[] = {2, 2, 3, 3};
  const int blocks = tap == Tap::conv4 ? 2 : tap == Tap::conv7 ? 3 : 4;
  ReceptiveField rf{1, 1};
  for (int b = 0; b < blocks; ++b) {
    if (b > 0) {
      rf.size += rf.jump;
      rf.jump *= 2;
    }
    for (int i = 0; i < kConvsPerBlock[b]; ++i) rf.size += 2 * rf.jump;
  }
  return rf;
}

ReceptiveField receptive_field(std::string_view tap) {
  return receptive_field(tap_from_string(tap));
}

void write_pgm(const std::string& path, const Image& image) {
  if (image.channels != 1) throw Error("PGM output needs a single-channel image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.data.size());
  std::transform(image.data.begin(), image.data.end(), bytes.begin(), [](double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  });
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing " + path);
}

Image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P5" || width <= 0 || height <= 0 || maxval != 255)
    throw Error(path + ": not an 8-bit binary PGM");
  in.get();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!in) throw Error(path + ": truncated PGM payload");
  Image image(1, height, width);
  std::transform(bytes.begin(), bytes.end(), image.data.begin(),
                 [](unsigned char b) { return b / 255.0; });
  return image;
}

}  // namespace mlfsc
