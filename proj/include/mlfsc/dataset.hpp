#pragma once

#include "mlfsc/patches.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mlfsc {

struct TestImage {
  std::string path;
  bool anomalous = false;
  std::string defect_type;  // subdirectory name under test/, "good" for normal
};

// MVTec-AD style layout:
//   <root>/<category>/train/good/*.png   (normal only)
//   <root>/<category>/test/<defect>/*.png ("good" = normal)
struct DatasetIndex {
  std::string category;
  std::vector<std::string> train_images;
  std::vector<TestImage> test_images;
};

// Paths are sorted lexicographically (defect directories, then files). Every
// image header is checked so an undecodable file fails here, by name.
DatasetIndex ingest(const std::filesystem::path& root, const std::string& category);

// PNG files directly inside `dir`, sorted.
std::vector<std::string> list_pngs(const std::filesystem::path& dir);

}  // namespace mlfsc
