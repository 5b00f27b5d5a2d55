#pragma once

#include "mlfsc/patches.hpp"

#include <string>

namespace mlfsc {

// 8/16-bit PNG -> Image in [0, 1]. Gray and gray+alpha load as one channel,
// everything else as RGB (alpha dropped). Throws mlfsc::Error naming the file.
Image read_png(const std::string& path);

// Cheap header check used during ingestion.
bool is_decodable_png(const std::string& path);

// Writes an 8-bit gray or RGB PNG; values are clamped to [0, 1].
void write_png(const std::string& path, const Image& image);

// Box-filter resampling: each output pixel is the area-weighted mean of the
// input pixels its footprint covers.
Image resize_area(const Image& image, int height, int width);

// Luma 0.299 R + 0.587 G + 0.114 B; single-channel input is returned as is.
Image to_grayscale(const Image& image);

// Gray input is replicated into three planes.
Image to_rgb(const Image& image);

}  // namespace mlfsc
