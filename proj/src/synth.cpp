#include "mlfsc/synth.hpp"

#include "mlfsc/error.hpp"
#include "mlfsc/image_io.hpp"
#include "mlfsc/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace mlfsc {

namespace fs = std::filesystem;

namespace {

struct Grating {
  double fx, fy;  // cycles per pixel
  double weight;
};

// Dataset-level texture: fixed gratings and tint, drawn once per seed.
struct Texture {
  std::array<Grating, 3> gratings;
  std::array<double, 3> tint;
};

Texture make_texture(std::uint64_t seed) {
  Rng rng = make_rng(seed, "synth/texture");
  Texture t{};
  const double base_angle = std::numbers::pi * uniform01(rng);
  for (int i = 0; i < 3; ++i) {
    const double angle = base_angle + i * std::numbers::pi / 3.0 + 0.2 * (uniform01(rng) - 0.5);
    const double period = 5.0 + 6.0 * uniform01(rng);
    t.gratings[i] = {std::cos(angle) / period, std::sin(angle) / period,
                     0.6 + 0.4 * uniform01(rng)};
  }
  for (auto& c : t.tint) c = 0.75 + 0.25 * uniform01(rng);
  return t;
}

Image normal_image(const Texture& tex, const SynthParams& p, Rng& rng) {
  std::array<double, 3> phase{};
  for (auto& ph : phase) ph = 2.0 * std::numbers::pi * uniform01(rng);
  double total_weight = 0.0;
  for (const auto& g : tex.gratings) total_weight += g.weight;
  const double light_angle = 2.0 * std::numbers::pi * uniform01(rng);
  const double light_period = 150.0 + 100.0 * uniform01(rng);
  const double light_fx = std::cos(light_angle) / light_period;
  const double light_fy = std::sin(light_angle) / light_period;
  const double light_phase = 2.0 * std::numbers::pi * uniform01(rng);

  Image img(3, p.size, p.size);
  for (int y = 0; y < p.size; ++y) {
    for (int x = 0; x < p.size; ++x) {
      double v = 0.0;
      for (int i = 0; i < 3; ++i) {
        const auto& g = tex.gratings[i];
        v += g.weight * std::sin(2.0 * std::numbers::pi * (g.fx * x + g.fy * y) + phase[i]);
      }
      const double light =
          p.illumination *
          std::sin(2.0 * std::numbers::pi * (light_fx * x + light_fy * y) + light_phase);
      const double lum = 0.5 + p.contrast * v / total_weight + light;
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = tex.tint[c] * lum + p.noise * standard_normal(rng);
    }
  }
  return img;
}

void clamp01(Image& img) {
  for (double& v : img.data) v = std::clamp(v, 0.0, 1.0);
}

Image empty_mask(int size) { return Image(1, size, size); }

Image plant_small(Image& img, const SynthParams& p, Rng& rng) {
  const int side = p.small_min + static_cast<int>(uniform_index(
                                     rng, static_cast<std::uint64_t>(p.small_max - p.small_min + 1)));
  const int margin = 16;
  const int span = p.size - 2 * margin - side;
  const int y0 = margin + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(span)));
  const int x0 = margin + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(span)));
  const double value = uniform01(rng) < 0.5 ? 0.02 : 0.98;
  Image mask = empty_mask(p.size);
  for (int y = y0; y < y0 + side; ++y)
    for (int x = x0; x < x0 + side; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = value;
      mask.at(0, y, x) = 1.0;
    }
  return mask;
}

Image plant_large(Image& img, const SynthParams& p, Rng& rng) {
  const int diameter = p.large_min + static_cast<int>(uniform_index(
                                         rng, static_cast<std::uint64_t>(p.large_max - p.large_min + 1)));
  const double radius = 0.5 * diameter;
  const double lo = radius + 4.0;
  const double hi = p.size - radius - 4.0;
  const double cy = lo + (hi - lo) * uniform01(rng);
  const double cx = lo + (hi - lo) * uniform01(rng);
  const double luma_sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;

  // Random unit direction orthogonal to the luma weights.
  const std::array<double, 3> luma{0.299, 0.587, 0.114};
  const double luma_norm2 = luma[0] * luma[0] + luma[1] * luma[1] + luma[2] * luma[2];
  std::array<double, 3> chroma{};
  double norm = 0.0;
  while (norm < 1e-3) {
    for (auto& c : chroma) c = standard_normal(rng);
    const double dot = chroma[0] * luma[0] + chroma[1] * luma[1] + chroma[2] * luma[2];
    for (int c = 0; c < 3; ++c) chroma[c] -= dot / luma_norm2 * luma[c];
    norm = std::sqrt(chroma[0] * chroma[0] + chroma[1] * chroma[1] + chroma[2] * chroma[2]);
  }
  for (auto& c : chroma) c /= norm;

  Image mask = empty_mask(p.size);
  for (int y = 0; y < p.size; ++y) {
    for (int x = 0; x < p.size; ++x) {
      const double r = std::hypot(y + 0.5 - cy, x + 0.5 - cx);
      if (r >= radius) continue;
      const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * r / radius));
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) += w * (luma_sign * p.stain_luma + p.stain_chroma * chroma[c]);
      if (w >= 0.5) mask.at(0, y, x) = 1.0;
    }
  }
  return mask;
}

std::string image_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d.png", i);
  return buf;
}

std::string mask_name(int i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%03d_mask.png", i);
  return buf;
}

}  // namespace

void SynthParams::validate() const {
  if (size < 32) throw ConfigError("synth size must be >= 32");
  if (n_train < 0 || n_test_good < 0 || n_test_small < 0 || n_test_large < 0)
    throw ConfigError("synth counts must be non-negative");
  if (small_min < 1 || small_max < small_min) throw ConfigError("bad small anomaly size range");
  if (large_min < 1 || large_max < large_min) throw ConfigError("bad large anomaly size range");
  if (small_max + 32 >= size) throw ConfigError("small anomalies do not fit the image");
  if (large_max + 8 >= size) throw ConfigError("large anomalies do not fit the image");
  if (!(noise >= 0.0)) throw ConfigError("noise must be >= 0");
  if (!(contrast >= 0.0 && illumination >= 0.0 && stain_luma >= 0.0 && stain_chroma >= 0.0))
    throw ConfigError("synth amplitudes must be >= 0");
}

SynthSummary cmd_synth(const fs::path& out_dir, const SynthParams& params, std::uint64_t seed) {
  params.validate();
  const Texture tex = make_texture(seed);
  auto make_dir = [&](const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
    return dir;
  };

  SynthSummary summary;
  const fs::path train = make_dir(out_dir / "train" / "good");
  for (int i = 0; i < params.n_train; ++i, ++summary.train) {
    Rng rng = make_rng(seed, "synth/train/" + std::to_string(i));
    Image img = normal_image(tex, params, rng);
    clamp01(img);
    write_png((train / image_name(i)).string(), img);
  }
  const fs::path good = make_dir(out_dir / "test" / "good");
  for (int i = 0; i < params.n_test_good; ++i, ++summary.test_good) {
    Rng rng = make_rng(seed, "synth/test/good/" + std::to_string(i));
    Image img = normal_image(tex, params, rng);
    clamp01(img);
    write_png((good / image_name(i)).string(), img);
  }
  const struct {
    const char* name;
    int count;
    Image (*plant)(Image&, const SynthParams&, Rng&);
    int* tally;
  } defects[] = {{"small", params.n_test_small, plant_small, &summary.test_small},
                 {"large", params.n_test_large, plant_large, &summary.test_large}};
  for (const auto& d : defects) {
    if (d.count == 0) continue;
    const fs::path dir = make_dir(out_dir / "test" / d.name);
    const fs::path gt = make_dir(out_dir / "ground_truth" / d.name);
    for (int i = 0; i < d.count; ++i, ++*d.tally) {
      Rng rng = make_rng(seed, std::string("synth/test/") + d.name + "/" + std::to_string(i));
      Image img = normal_image(tex, params, rng);
      const Image mask = d.plant(img, params, rng);
      clamp01(img);
      write_png((dir / image_name(i)).string(), img);
      write_png((gt / mask_name(i)).string(), mask);
    }
  }
  return summary;
}

}  // namespace mlfsc
