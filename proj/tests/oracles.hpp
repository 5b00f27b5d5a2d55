// Test-side reference implementations. Each one is the most direct
// formulation available and shares no code with the library under test.
#pragma once

#include "mlfsc/features.hpp"
#include "mlfsc/patches.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace oracle {

// Zero-padded 3x3 convolution + bias + ReLU as six nested loops.
inline mlfsc::Tensor3 conv3x3_relu(const mlfsc::Tensor3& in, int out_channels,
                                   const std::vector<double>& w, const std::vector<double>& b) {
  mlfsc::Tensor3 out(out_channels, in.height, in.width);
  for (int o = 0; o < out_channels; ++o)
    for (int y = 0; y < in.height; ++y)
      for (int x = 0; x < in.width; ++x) {
        double acc = b[o];
        for (int i = 0; i < in.channels; ++i)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int yy = y + ky - 1, xx = x + kx - 1;
              if (yy < 0 || xx < 0 || yy >= in.height || xx >= in.width) continue;
              acc += w[((static_cast<std::size_t>(o) * in.channels + i) * 3 + ky) * 3 + kx] *
                     in.at(i, yy, xx);
            }
        out.at(o, y, x) = std::max(acc, 0.0);
      }
  return out;
}

inline mlfsc::Tensor3 max_pool(const mlfsc::Tensor3& in) {
  mlfsc::Tensor3 out(in.channels, in.height / 2, in.width / 2);
  for (int c = 0; c < in.channels; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        out.at(c, y, x) = std::max({in.at(c, 2 * y, 2 * x), in.at(c, 2 * y, 2 * x + 1),
                                    in.at(c, 2 * y + 1, 2 * x), in.at(c, 2 * y + 1, 2 * x + 1)});
  return out;
}

// Normalization + the conv/pool layout, layer by layer through the oracles.
inline std::array<mlfsc::Tensor3, 3> reference_forward(const mlfsc::NetworkPrefix& net,
                                                       const mlfsc::Image& img) {
  mlfsc::Tensor3 x = img;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx)
        x.at(c, y, xx) = (x.at(c, y, xx) - net.normalization.mean[c]) / net.normalization.std[c];
  std::array<mlfsc::Tensor3, 3> taps;
  const int tap_layers[] = {3, 6, 9};
  const int pool_layers[] = {1, 3, 6};
  for (int i = 0; i < 10; ++i) {
    x = conv3x3_relu(x, net.layers[i].out_channels, net.layers[i].weights,
                             net.layers[i].bias);
    for (int t = 0; t < 3; ++t)
      if (i == tap_layers[t]) taps[t] = x;
    for (int p : pool_layers)
      if (i == p) x = max_pool(x);
  }
  return taps;
}

// P(a > n) + 1/2 P(a == n) over all (anomalous, normal) pairs, as an exact
// count of half-wins.
inline double pairwise_auroc(const std::vector<double>& scores, const std::vector<bool>& anomalous) {
  std::int64_t half_wins = 0, pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!anomalous[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (anomalous[j]) continue;
      ++pairs;
      if (scores[i] > scores[j]) half_wins += 2;
      else if (scores[i] == scores[j]) half_wins += 1;
    }
  }
  return static_cast<double>(half_wins) / (2.0 * static_cast<double>(pairs));
}

// Best balanced accuracy over every threshold in a dense candidate set:
// all scores, all midpoints and both infinities.
inline double exhaustive_best_balanced(const std::vector<double>& scores,
                                       const std::vector<bool>& anomalous) {
  std::vector<double> candidates = scores;
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i)
    candidates.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  candidates.push_back(-INFINITY);
  candidates.push_back(INFINITY);
  double n_normal = 0, n_anomalous = 0;
  for (bool a : anomalous) (a ? n_anomalous : n_normal) += 1;
  double best = 0.0;
  for (double t : candidates) {
    double tn = 0, tp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool flagged = scores[i] > t;
      if (anomalous[i] && flagged) ++tp;
      if (!anomalous[i] && !flagged) ++tn;
    }
    best = std::max(best, 0.5 * (tn / n_normal + tp / n_anomalous));
  }
  return best;
}

inline double sorted_topk(std::vector<double> v, int k) {
  std::sort(v.begin(), v.end(), std::greater<>());
  double s = 0.0;
  for (int i = 0; i < k && i < static_cast<int>(v.size()); ++i) s += v[static_cast<std::size_t>(i)];
  return s;
}

// Windows enumerated one by one.
inline int count_windows(int length, int patch, int stride) {
  int n = 0;
  for (int start = 0; start + patch <= length; start += stride) ++n;
  return n;
}

// Per-pixel max over every patch whose footprint covers the pixel.
inline std::vector<double> brute_heatmap(const std::vector<double>& errors, int rows, int cols,
                                         int height, int width, int p, int s) {
  std::vector<double> map(static_cast<std::size_t>(height) * width, 0.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double best = -INFINITY;
      bool covered = false;
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
          if (y >= r * s && y < r * s + p && x >= c * s && x < c * s + p) {
            best = std::max(best, errors[static_cast<std::size_t>(r) * cols + c]);
            covered = true;
          }
      map[static_cast<std::size_t>(y) * width + x] = covered ? best : -INFINITY;
    }
  double lo = INFINITY, hi = -INFINITY;
  for (double v : map)
    if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double& v : map) {
    if (!std::isfinite(v)) v = lo;
    v = hi > lo ? (v - lo) / (hi - lo) : 0.0;
  }
  return map;
}

// KKT residual of a lasso solution: max violation of
// d_j^T r = alpha sign(c_j) on the support and |d_j^T r| <= alpha off it.
inline double kkt_violation(const Eigen::MatrixXd& D, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& c, double alpha) {
  const Eigen::VectorXd corr = D.transpose() * (x - D * c);
  double worst = 0.0;
  for (Eigen::Index j = 0; j < c.size(); ++j) {
    if (c(j) != 0.0)
      worst = std::max(worst, std::abs(corr(j) - alpha * (c(j) > 0 ? 1.0 : -1.0)));
    else
      worst = std::max(worst, std::abs(corr(j)) - alpha);
  }
  return worst;
}

inline double lasso_objective(const Eigen::MatrixXd& D, const Eigen::VectorXd& x,
                              const Eigen::VectorXd& c, double alpha) {
  return 0.5 * (x - D * c).squaredNorm() + alpha * c.lpNorm<1>();
}

inline Eigen::MatrixXd random_unit_columns(std::mt19937_64& gen, int rows, int cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd D(rows, cols);
  for (int j = 0; j < cols; ++j) {
    for (int i = 0; i < rows; ++i) D(i, j) = n(gen);
    D.col(j).normalize();
  }
  return D;
}

inline Eigen::VectorXd random_vector(std::mt19937_64& gen, int n, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = dist(gen);
  return v;
}

// Scratch directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("mlfsc_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace oracle
