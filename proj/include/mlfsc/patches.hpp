#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mlfsc {

// Dense C x H x W block of doubles, planar layout: data[(c * H + y) * W + x].
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * h * w, fill) {}

  double& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  std::size_t plane_size() const {
    return static_cast<std::size_t>(height) * width;
  }
  bool all_finite() const;
};

// Image with 1 (grayscale) or 3 (RGB) planes, values in [0, 1].
struct Image : Tensor3 {
  using Tensor3::Tensor3;
};

enum class Tap { conv4, conv7, conv10 };

inline constexpr Tap kAllTaps[] = {Tap::conv4, Tap::conv7, Tap::conv10};

std::string_view tap_name(Tap tap);
// Throws mlfsc::Error on anything but "conv4", "conv7", "conv10".
Tap tap_from_string(std::string_view name);

struct FeatureTensor : Tensor3 {
  Tap tap = Tap::conv4;
};

struct PatchGrid {
  int rows = 0;
  int cols = 0;
  std::size_t count() const { return static_cast<std::size_t>(rows) * cols; }
  bool operator==(const PatchGrid&) const = default;
};

// floor((length - patch) / stride) + 1, or 0 when the patch does not fit.
int window_count(int length, int patch_size, int stride);

struct PatchMatrix {
  Eigen::MatrixXd columns;    // dim x count, one flattened patch per column
  PatchGrid grid;
  int patch_size = 0;
  int stride = 0;
  int channels = 0;
  std::string source = "raw";  // "raw" or a tap name
  std::vector<double> means;   // per-column means when mean subtraction is on

  Eigen::Index dim() const { return columns.rows(); }
  Eigen::Index count() const { return columns.cols(); }
  bool mean_removed() const { return !means.empty(); }
};

// Streams patches out of a tensor without materializing the full
// PatchMatrix. gather() writes exactly the column extract_patches() stores.
class PatchSampler {
 public:
  PatchSampler(const Tensor3& source, int patch_size, int stride,
               bool subtract_mean);

  PatchGrid grid() const { return grid_; }
  std::size_t count() const { return grid_.count(); }
  Eigen::Index dim() const { return dim_; }

  // Fills `out` (length dim()) with patch `index` in row-major grid order and
  // returns the subtracted mean (0 when mean subtraction is off).
  double gather(std::size_t index, std::span<double> out) const;

 private:
  const Tensor3* source_;
  int patch_size_;
  int stride_;
  bool subtract_mean_;
  PatchGrid grid_;
  Eigen::Index dim_;
};

// Patches at offsets (r * stride, c * stride) for every window that fits,
// flattened channel-major then row-major. Throws on undersized or non-finite
// sources.
PatchMatrix extract_patches(const Tensor3& source, int patch_size, int stride,
                            bool subtract_mean, std::string source_tag = "raw");

// Inverse of extract_patches for non-overlapping patches without mean
// removal: writes each column back into a (channels, rows*p, cols*p) tensor.
Tensor3 assemble_patches(const PatchMatrix& patches);

// Max-accumulates each patch's value over its footprint in a height x width
// map, then min-max normalizes to [0, 1]. A constant field maps to zeros.
Image patch_grid_to_heatmap(std::span<const double> errors, PatchGrid grid,
                            int height, int width, int patch_size, int stride);

// Nearest-neighbour upscale by an integer factor (cell grid -> input pixels).
Image upscale_nearest(const Image& image, int factor);

struct ReceptiveField {
  int size = 0;  // input pixels covered by one feature cell
  int jump = 0;  // input pixels between adjacent cells

  // Input pixels spanned by a patch of `cells` x `cells` feature cells.
  int patch_span(int cells) const { return size + (cells - 1) * jump; }
};

ReceptiveField receptive_field(Tap tap);
ReceptiveField receptive_field(std::string_view tap);

// 8-bit binary PGM (P5). Values are clamped to [0, 1] and scaled to 0..255.
void write_pgm(const std::string& path, const Image& image);
Image read_pgm(const std::string& path);

}  // namespace mlfsc
