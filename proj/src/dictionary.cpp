#include "mlfsc/dictionary.hpp"

#include "binary_io.hpp"
#include "mlfsc/error.hpp"
#include "mlfsc/lasso.hpp"
#include "mlfsc/parallel.hpp"
#include "mlfsc/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace mlfsc {

namespace {

constexpr char kMagic[4] = {'M', 'L', 'F', 'D'};
constexpr std::uint32_t kVersion = 1;

Eigen::VectorXd random_unit(Rng& rng, Eigen::Index dim) {
  Eigen::VectorXd v(dim);
  do {
    for (Eigen::Index i = 0; i < dim; ++i) v(i) = standard_normal(rng);
  } while (v.norm() == 0.0);
  return v / v.norm();
}

void check_atoms(const Eigen::MatrixXd& atoms, double tolerance) {
  if (atoms.rows() == 0 || atoms.cols() == 0) throw Error("dictionary is empty");
  for (Eigen::Index n = 0; n < atoms.cols(); ++n) {
    if (!atoms.col(n).allFinite())
      throw Error("dictionary atom " + std::to_string(n) + " has non-finite entries");
    const double norm = atoms.col(n).norm();
    if (std::abs(norm - 1.0) > tolerance)
      throw Error("dictionary atom " + std::to_string(n) + " has norm " +
                  std::to_string(norm) + ", expected unit norm");
  }
}

nlohmann::json meta_to_json(const DictionaryMeta& m) {
  return {{"patch_size", m.patch_size}, {"stride", m.stride},
          {"channels", m.channels},     {"source", m.source},
          {"mean_subtraction", m.mean_subtraction}, {"alpha", m.alpha}};
}

DictionaryMeta meta_from_json(const nlohmann::json& j) {
  DictionaryMeta m;
  m.patch_size = j.at("patch_size").get<int>();
  m.stride = j.at("stride").get<int>();
  m.channels = j.at("channels").get<int>();
  m.source = j.at("source").get<std::string>();
  m.mean_subtraction = j.at("mean_subtraction").get<bool>();
  m.alpha = j.at("alpha").get<double>();
  return m;
}

}  // namespace

Dictionary::Dictionary(Eigen::MatrixXd atoms, DictionaryMeta meta)
    : atoms_(std::move(atoms)), meta_(std::move(meta)) {
  check_atoms(atoms_, kNormTolerance);
}

void TrainConfig::validate() const {
  if (n_atoms < 1) throw ConfigError("n_atoms must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!std::isfinite(alpha) || alpha < 0.0) throw ConfigError("alpha must be >= 0");
  if (!(tol >= 0.0)) throw ConfigError("tol must be >= 0");
}

DictionaryMeta meta_for(const PatchMatrix& patches, double alpha) {
  return {patches.patch_size, patches.stride, patches.channels, patches.source,
          patches.mean_removed(), alpha};
}

Dictionary init_dictionary(const PatchMatrix& patches, int n_atoms,
                           std::uint64_t seed, double alpha) {
  if (n_atoms < 1) throw Error("init_dictionary: n_atoms must be >= 1");
  if (patches.count() < n_atoms)
    throw Error("init_dictionary: " + std::to_string(patches.count()) +
                " patches for " + std::to_string(n_atoms) + " atoms");
  if (!patches.columns.allFinite()) throw Error("init_dictionary: non-finite patches");
  Rng rng = make_rng(seed, "dictionary/init");
  const auto picks = sample_without_replacement(
      rng, static_cast<std::size_t>(patches.count()), static_cast<std::size_t>(n_atoms));
  Eigen::MatrixXd atoms(patches.dim(), n_atoms);
  for (int n = 0; n < n_atoms; ++n) {
    const auto col = patches.columns.col(static_cast<Eigen::Index>(picks[n]));
    const double norm = col.norm();
    if (norm > 0.0)
      atoms.col(n) = col / norm;
    else
      atoms.col(n) = random_unit(rng, patches.dim());
  }
  return Dictionary(std::move(atoms), meta_for(patches, alpha));
}

LearnResult learn(const PatchMatrix& patches, const TrainConfig& config) {
  config.validate();
  if (patches.dim() < 1) throw Error("learn: patches have zero dimension");

  const Eigen::Index dim = patches.dim();
  const Eigen::Index count = patches.count();
  const Eigen::Index n_atoms = config.n_atoms;
  Eigen::MatrixXd atoms =
      init_dictionary(patches, config.n_atoms, config.seed, config.alpha).atoms();
  Rng reseed_rng = make_rng(config.seed, "dictionary/reseed");

  LearnResult result{Dictionary(atoms, meta_for(patches, config.alpha)), {}, 0};
  std::vector<double> errors(static_cast<std::size_t>(count));
  std::vector<SparseCode> batch_codes;

  for (int epoch = 0;; ++epoch) {
    // Encode pass: exact minimization over the codes for the current atoms.
    const LarsEncoder encoder(atoms);
    Eigen::MatrixXd gram_codes = Eigen::MatrixXd::Zero(n_atoms, n_atoms);  // A
    Eigen::MatrixXd data_codes = Eigen::MatrixXd::Zero(dim, n_atoms);      // B
    double objective = 0.0;
    for (Eigen::Index begin = 0; begin < count; begin += config.batch_size) {
      const Eigen::Index end = std::min<Eigen::Index>(count, begin + config.batch_size);
      batch_codes.assign(static_cast<std::size_t>(end - begin), SparseCode{});
      parallel_for(batch_codes.size(), config.jobs, [&](std::size_t i) {
        batch_codes[i] = encoder.encode(
            patches.columns.col(begin + static_cast<Eigen::Index>(i)), config.alpha);
      });
      for (std::size_t i = 0; i < batch_codes.size(); ++i) {
        const SparseCode& code = batch_codes[i];
        const Eigen::Index j = begin + static_cast<Eigen::Index>(i);
        objective += code.objective;
        errors[static_cast<std::size_t>(j)] = code.residual_norm;
        for (Eigen::Index a : code.support) {
          const double ca = code.coefficients(a);
          data_codes.col(a).noalias() += ca * patches.columns.col(j);
          for (Eigen::Index b : code.support) gram_codes(a, b) += ca * code.coefficients(b);
        }
      }
    }
    if (!std::isfinite(objective))
      throw Error("learn: objective became non-finite at epoch " + std::to_string(epoch));
    result.objective_trace.push_back(objective);

    if (epoch == config.epochs) break;
    if (epoch > 0) {
      const double previous = result.objective_trace[epoch - 1];
      if (previous - objective < config.tol * std::abs(previous)) break;
    }

    // Block coordinate descent over atoms with the codes held fixed.
    std::vector<Eigen::Index> dead;
    for (Eigen::Index n = 0; n < n_atoms; ++n) {
      if (gram_codes(n, n) <= 0.0) {
        dead.push_back(n);
        continue;
      }
      Eigen::VectorXd update = data_codes.col(n) - atoms * gram_codes.col(n) +
                               atoms.col(n) * gram_codes(n, n);
      const double norm = update.norm();
      if (norm > 0.0 && std::isfinite(norm)) atoms.col(n) = update / norm;
    }
    if (!dead.empty()) {
      std::vector<std::size_t> order(errors.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
      for (std::size_t i = 0; i < dead.size(); ++i) {
        const auto col = patches.columns.col(
            static_cast<Eigen::Index>(order[i % order.size()]));
        const double norm = col.norm();
        atoms.col(dead[i]) = norm > 0.0 ? Eigen::VectorXd(col / norm)
                                        : random_unit(reseed_rng, dim);
      }
      result.reseeded_atoms += static_cast<int>(dead.size());
    }
  }
  result.dictionary = Dictionary(std::move(atoms), meta_for(patches, config.alpha));
  return result;
}

void save_dictionary(const Dictionary& dictionary, const std::string& path) {
  const auto& atoms = dictionary.atoms();
  const std::vector<char> payload = binary::to_bytes<double>(
      {atoms.data(), static_cast<std::size_t>(atoms.size())});

  nlohmann::json header = {{"dim", atoms.rows()},
                           {"atoms", atoms.cols()},
                           {"dtype", "f64"},
                           {"layout", "column-major"},
                           {"payload_offset", 0},
                           {"payload_bytes", payload.size()},
                           {"meta", meta_to_json(dictionary.meta())}};
  // payload_offset is absolute; iterate until its own digits stop moving it.
  std::string text;
  for (std::size_t offset = 0;;) {
    header["payload_offset"] = offset;
    text = header.dump();
    const std::size_t actual = sizeof(kMagic) + 4 + 8 + text.size();
    if (actual == offset) break;
    offset = actual;
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  binary::write_pod<std::uint32_t>(out, kVersion);
  binary::write_pod<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  binary::write_pod<std::uint32_t>(out, binary::crc32_of(payload));
  if (!out) throw Error("failed writing " + path);
}

Dictionary load_dictionary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dictionary " + path);
  char magic[4] = {};
  in.read(magic, sizeof(magic));
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kMagic))
    throw Error(path + ": not a dictionary file (bad magic)");
  const auto version = binary::read_pod<std::uint32_t>(in, path);
  if (version != kVersion)
    throw Error(path + ": unsupported dictionary version " + std::to_string(version));
  const auto header_len = binary::read_pod<std::uint64_t>(in, path);
  const std::vector<char> header_bytes = binary::read_bytes(in, header_len);
  if (header_bytes.size() != header_len) throw Error(path + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_bytes.begin(), header_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": malformed header: " + e.what());
  }

  Eigen::Index dim = 0, n_atoms = 0;
  std::string dtype;
  std::size_t payload_bytes = 0;
  DictionaryMeta meta;
  try {
    dim = header.at("dim").get<Eigen::Index>();
    n_atoms = header.at("atoms").get<Eigen::Index>();
    dtype = header.at("dtype").get<std::string>();
    payload_bytes = header.at("payload_bytes").get<std::size_t>();
    meta = meta_from_json(header.at("meta"));
  } catch (const nlohmann::json::exception& e) {
    throw Error(path + ": incomplete header: " + e.what());
  }
  const std::size_t width = dtype == "f64" ? 8 : dtype == "f32" ? 4 : 0;
  if (width == 0) throw Error(path + ": unsupported dtype " + dtype);
  if (dim <= 0 || n_atoms <= 0 ||
      payload_bytes != static_cast<std::size_t>(dim * n_atoms) * width)
    throw Error(path + ": header sizes are inconsistent");

  const std::vector<char> payload = binary::read_bytes(in, payload_bytes);
  std::uint32_t stored_crc = 0;
  in.read(reinterpret_cast<char*>(&stored_crc), sizeof(stored_crc));
  if (payload.size() != payload_bytes || in.gcount() != sizeof(stored_crc))
    throw Error(path + ": checksum missing, file is truncated");
  if (stored_crc != binary::crc32_of(payload))
    throw Error(path + ": payload checksum mismatch");

  Eigen::MatrixXd atoms(dim, n_atoms);
  if (width == 8) {
    std::memcpy(atoms.data(), payload.data(), payload.size());
  } else {
    // Single-precision files cannot hold unit norms to 1e-9: validate at
    // float precision, then renormalize in double.
    Eigen::MatrixXf narrow(dim, n_atoms);
    std::memcpy(narrow.data(), payload.data(), payload.size());
    atoms = narrow.cast<double>();
    check_atoms(atoms, 1e-5);
    for (Eigen::Index n = 0; n < n_atoms; ++n) atoms.col(n).normalize();
  }
  return Dictionary(std::move(atoms), std::move(meta));
}

}  // namespace mlfsc
