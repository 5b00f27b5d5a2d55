#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

namespace mlfsc {

// Synthetic texture category in MVTec-AD layout:
//   <out>/train/good, <out>/test/{good,small,large},
//   <out>/ground_truth/{small,large}/<name>_mask.png
// Normal images are oriented gratings with per-image phase, a slow
// illumination wave and pixel noise. "small" plants one high-contrast square
// no wider than half a raw patch. "large" plants a soft discoloration several
// raw patches wide: a smooth luma bump whose slope stays within the normal
// illumination range plus a luma-neutral colour shift, so locally (and in
// grayscale) it looks like ordinary lighting.
struct SynthParams {
  int size = 224;
  int n_train = 10;
  int n_test_good = 20;
  int n_test_small = 20;
  int n_test_large = 20;
  double noise = 0.02;
  double contrast = 0.25;       // grating amplitude around mid-gray
  double illumination = 0.1;    // amplitude of the slow lighting wave
  int small_min = 5;
  int small_max = 8;
  int large_min = 72;           // discoloration diameter range, pixels
  int large_max = 96;
  double stain_luma = 0.03;     // peak brightness change
  double stain_chroma = 0.4;    // peak luma-neutral colour change
  void validate() const;
};

struct SynthSummary {
  int train = 0;
  int test_good = 0;
  int test_small = 0;
  int test_large = 0;
};

SynthSummary cmd_synth(const std::filesystem::path& out_dir, const SynthParams& params,
                       std::uint64_t seed);

}  // namespace mlfsc
