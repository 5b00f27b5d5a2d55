#pragma once

#include "mlfsc/patches.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace mlfsc {

// Extraction parameters a dictionary was trained with. Scoring refuses to mix
// a dictionary with patches extracted differently.
struct DictionaryMeta {
  int patch_size = 0;
  int stride = 0;
  int channels = 0;
  std::string source = "raw";  // "raw" or a tap name
  bool mean_subtraction = false;
  double alpha = 0.0;

  bool operator==(const DictionaryMeta&) const = default;
};

// M x N atom matrix with unit-norm columns.
class Dictionary {
 public:
  static constexpr double kNormTolerance = 1e-9;

  // Throws mlfsc::Error if an atom is non-finite or off the unit sphere.
  Dictionary(Eigen::MatrixXd atoms, DictionaryMeta meta);

  const Eigen::MatrixXd& atoms() const { return atoms_; }
  const DictionaryMeta& meta() const { return meta_; }
  Eigen::Index dim() const { return atoms_.rows(); }
  Eigen::Index size() const { return atoms_.cols(); }

  bool operator==(const Dictionary& other) const {
    return meta_ == other.meta_ && atoms_.rows() == other.atoms_.rows() &&
           atoms_.cols() == other.atoms_.cols() && atoms_ == other.atoms_;
  }

 private:
  Eigen::MatrixXd atoms_;
  DictionaryMeta meta_;
};

struct TrainConfig {
  int n_atoms = 5;
  double alpha = 1.0;
  int epochs = 15;
  int batch_size = 512;
  std::uint64_t seed = 0;
  double tol = 1e-4;  // relative objective improvement that stops training
  int jobs = 1;       // encode parallelism; does not affect the result

  void validate() const;
};

struct LearnResult {
  Dictionary dictionary;
  // Full-data objective sum_j 1/2 ||y_j - D c_j||^2 + alpha ||c_j||_1 with
  // c_j = encode_lars(y_j, D); entry 0 is the initial dictionary.
  std::vector<double> objective_trace;
  int reseeded_atoms = 0;
};

// Meta for a dictionary trained on `patches` with `alpha`.
DictionaryMeta meta_for(const PatchMatrix& patches, double alpha);

// N distinct training patches (seeded), scaled to unit norm.
Dictionary init_dictionary(const PatchMatrix& patches, int n_atoms,
                           std::uint64_t seed, double alpha = 0.0);

// Alternating minimization of the full-data objective: encode every patch
// (in batches of batch_size) with LARS, accumulating A = sum c c^T and
// B = sum y c^T, then update each atom in turn to the exact minimizer on the
// unit sphere with the codes held fixed: d_n <- normalize(B_n - D A_n + d_n A_nn).
// Atoms no patch uses are replaced by the worst-reconstructed patches.
LearnResult learn(const PatchMatrix& patches, const TrainConfig& config);

// Binary "MLFD" format: magic, u32 version, u64 header length, JSON header,
// little-endian float payload (column-major), u32 CRC32 of the payload.
void save_dictionary(const Dictionary& dictionary, const std::string& path);
Dictionary load_dictionary(const std::string& path);

}  // namespace mlfsc
