#include "mlfsc/dataset.hpp"

#include "mlfsc/error.hpp"
#include "mlfsc/image_io.hpp"

#include <algorithm>

namespace fs = std::filesystem;

namespace mlfsc {

std::vector<std::string> list_pngs(const fs::path& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  return files;
}

DatasetIndex ingest(const fs::path& root, const std::string& category) {
  const fs::path base = category.empty() ? root : root / category;
  if (!fs::is_directory(base)) throw Error("dataset directory not found: " + base.string());
  const fs::path train_dir = base / "train" / "good";
  if (!fs::is_directory(train_dir)) throw Error("missing training directory " + train_dir.string());
  const fs::path test_dir = base / "test";
  if (!fs::is_directory(test_dir)) throw Error("missing test directory " + test_dir.string());

  DatasetIndex index;
  index.category = category.empty() ? base.filename().string() : category;
  index.train_images = list_pngs(train_dir);
  if (index.train_images.empty()) throw Error("no training images in " + train_dir.string());

  std::vector<fs::path> defect_dirs;
  for (const auto& entry : fs::directory_iterator(test_dir))
    if (entry.is_directory()) defect_dirs.push_back(entry.path());
  std::sort(defect_dirs.begin(), defect_dirs.end());
  for (const auto& dir : defect_dirs) {
    const std::string defect = dir.filename().string();
    for (auto& path : list_pngs(dir))
      index.test_images.push_back({std::move(path), defect != "good", defect});
  }
  if (index.test_images.empty()) throw Error("no test images under " + test_dir.string());

  for (const auto& p : index.train_images)
    if (!is_decodable_png(p)) throw Error("cannot decode image " + p);
  for (const auto& t : index.test_images)
    if (!is_decodable_png(t.path)) throw Error("cannot decode image " + t.path);
  return index;
}

}  // namespace mlfsc
