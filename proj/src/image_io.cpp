#include "mlfsc/image_io.hpp"

#include "mlfsc/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <vector>

namespace mlfsc {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw Error("cannot open image " + path);
  return f;
}

// libpng reports errors by longjmp. Everything that must survive the jump
// lives in this struct, owned by the C++ caller; the functions that call
// setjmp hold no objects with destructors.
struct PngState {
  std::string error;
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::size_t row_bytes = 0;
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
};

void on_png_error(png_structp png, png_const_charp message) {
  static_cast<PngState*>(png_get_error_ptr(png))->error = message;
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

// Reads header (and pixels unless header_only). Returns false on failure
// with state.error set.
bool png_read_raw(std::FILE* file, PngState& state, bool header_only) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &state, on_png_error,
                                           on_png_warning);
  if (!png) {
    state.error = "libpng initialisation failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (state.error.empty()) state.error = "libpng initialisation failed";
    return false;
  }
  png_init_io(png, file);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  if (!header_only) {
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if ((color & PNG_COLOR_MASK_ALPHA) || png_get_valid(png, info, PNG_INFO_tRNS))
      png_set_strip_alpha(png);
    if (depth == 16) png_set_swap(png);
    png_read_update_info(png, info);
  }
  state.width = static_cast<int>(png_get_image_width(png, info));
  state.height = static_cast<int>(png_get_image_height(png, info));
  state.channels = png_get_channels(png, info);
  state.bit_depth = png_get_bit_depth(png, info);
  state.row_bytes = png_get_rowbytes(png, info);
  if (!header_only) {
    state.pixels.resize(state.row_bytes * static_cast<std::size_t>(state.height));
    state.rows.resize(static_cast<std::size_t>(state.height));
    for (int y = 0; y < state.height; ++y)
      state.rows[y] = state.pixels.data() + static_cast<std::size_t>(y) * state.row_bytes;
    png_read_image(png, state.rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

bool png_write_raw(std::FILE* file, PngState& state) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &state, on_png_error,
                                            on_png_warning);
  if (!png) {
    state.error = "libpng initialisation failed";
    return false;
  }
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, info ? &info : nullptr);
    if (state.error.empty()) state.error = "libpng initialisation failed";
    return false;
  }
  png_init_io(png, file);
  png_set_IHDR(png, info, state.width, state.height, 8,
               state.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, state.rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

bool has_png_signature(std::FILE* f) {
  unsigned char sig[8];
  return std::fread(sig, 1, 8, f) == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

}  // namespace

bool is_decodable_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f || !has_png_signature(f.get())) return false;
  PngState state;
  return png_read_raw(f.get(), state, true) && state.width > 0 && state.height > 0;
}

Image read_png(const std::string& path) {
  FilePtr f = open_file(path, "rb");
  if (!has_png_signature(f.get())) throw Error(path + ": not a PNG file");
  PngState state;
  if (!png_read_raw(f.get(), state, false)) throw Error(path + ": " + state.error);
  if (state.channels != 1 && state.channels != 3)
    throw Error(path + ": unsupported channel layout (" + std::to_string(state.channels) + ")");

  Image image(state.channels, state.height, state.width);
  const bool wide = state.bit_depth == 16;
  const double scale = wide ? 1.0 / 65535.0 : 1.0 / 255.0;
  for (int y = 0; y < state.height; ++y) {
    const unsigned char* row = state.rows[y];
    for (int x = 0; x < state.width; ++x) {
      for (int c = 0; c < state.channels; ++c) {
        const std::size_t i = static_cast<std::size_t>(x) * state.channels + c;
        double v;
        if (wide) {
          std::uint16_t s;
          std::memcpy(&s, row + 2 * i, 2);
          v = s;
        } else {
          v = row[i];
        }
        image.at(c, y, x) = v * scale;
      }
    }
  }
  return image;
}

void write_png(const std::string& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3)
    throw Error("PNG output needs 1 or 3 channels");
  PngState state;
  state.width = image.width;
  state.height = image.height;
  state.channels = image.channels;
  state.row_bytes = static_cast<std::size_t>(image.width) * image.channels;
  state.pixels.resize(state.row_bytes * static_cast<std::size_t>(image.height));
  state.rows.resize(static_cast<std::size_t>(image.height));
  for (int y = 0; y < image.height; ++y) {
    state.rows[y] = state.pixels.data() + static_cast<std::size_t>(y) * state.row_bytes;
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c)
        state.rows[y][static_cast<std::size_t>(x) * image.channels + c] =
            static_cast<unsigned char>(std::lround(std::clamp(image.at(c, y, x), 0.0, 1.0) * 255.0));
  }
  FilePtr f = open_file(path, "wb");
  if (!png_write_raw(f.get(), state)) throw Error(path + ": " + state.error);
}

Image resize_area(const Image& image, int height, int width) {
  if (height < 1 || width < 1) throw Error("resize target must be positive");
  if (image.height == height && image.width == width) return image;

  // Per axis: for each output index, the (input index, weight) pairs whose
  // coverage overlaps its footprint; weights sum to 1.
  auto weights = [](int in, int out) {
    std::vector<std::vector<std::pair<int, double>>> w(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      const double lo = o * scale;
      const double hi = (o + 1) * scale;
      for (int i = static_cast<int>(std::floor(lo)); i < std::min(in, static_cast<int>(std::ceil(hi))); ++i) {
        const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
        if (overlap > 0.0) w[o].push_back({i, overlap / scale});
      }
    }
    return w;
  };
  const auto wy = weights(image.height, height);
  const auto wx = weights(image.width, width);

  Image out(image.channels, height, width);
  std::vector<double> row(static_cast<std::size_t>(width));
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < height; ++y) {
      std::fill(row.begin(), row.end(), 0.0);
      for (const auto& [sy, fy] : wy[y])
        for (int x = 0; x < width; ++x) {
          double acc = 0.0;
          for (const auto& [sx, fx] : wx[x]) acc += fx * image.at(c, sy, sx);
          row[x] += fy * acc;
        }
      for (int x = 0; x < width; ++x) out.at(c, y, x) = row[x];
    }
  }
  return out;
}

Image to_grayscale(const Image& image) {
  if (image.channels == 1) return image;
  if (image.channels != 3) throw Error("grayscale conversion needs 1 or 3 channels");
  Image out(1, image.height, image.width);
  const std::size_t plane = image.plane_size();
  for (std::size_t i = 0; i < plane; ++i)
    out.data[i] = 0.299 * image.data[i] + 0.587 * image.data[plane + i] +
                  0.114 * image.data[2 * plane + i];
  return out;
}

Image to_rgb(const Image& image) {
  if (image.channels == 3) return image;
  if (image.channels != 1) throw Error("RGB conversion needs 1 or 3 channels");
  Image out(3, image.height, image.width);
  for (int c = 0; c < 3; ++c)
    std::copy(image.data.begin(), image.data.end(), out.data.begin() + c * image.plane_size());
  return out;
}

}  // namespace mlfsc
