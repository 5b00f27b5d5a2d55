#pragma once

#include "mlfsc/error.hpp"

#include <Eigen/Dense>

#include <vector>

namespace mlfsc {

// One instance of min_c 1/2 ||x - D c||^2 + alpha ||c||_1.
struct LassoProblem {
  const Eigen::VectorXd& target;  // x, length M
  const Eigen::MatrixXd& atoms;   // D, M x N with unit-norm columns
  double alpha = 1.0;
};

struct SparseCode {
  Eigen::VectorXd coefficients;         // c, length N
  std::vector<Eigen::Index> support;    // ascending indices of nonzeros
  double residual_norm = 0.0;           // ||x - D c||_2
  double objective = 0.0;               // 1/2 ||x - D c||^2 + alpha ||c||_1
};

// Thrown by encode_cd when max_iter sweeps do not reach `tol`.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, SparseCode last)
      : Error(what), last_iterate(std::move(last)) {}
  SparseCode last_iterate;
};

// LARS with the lasso modification, specialised to one dictionary. The Gram
// matrix D^T D is computed once so many patches can be encoded against the
// same atoms; encode() is const and safe to call from several threads.
class LarsEncoder {
 public:
  explicit LarsEncoder(const Eigen::MatrixXd& atoms);

  SparseCode encode(const Eigen::Ref<const Eigen::VectorXd>& target,
                    double alpha) const;

  const Eigen::MatrixXd& atoms() const { return *atoms_; }
  const Eigen::MatrixXd& gram() const { return gram_; }

 private:
  Eigen::VectorXd solve_path(const Eigen::VectorXd& correlations,
                             double alpha) const;

  const Eigen::MatrixXd* atoms_;
  Eigen::MatrixXd gram_;
};

SparseCode encode_lars(const LassoProblem& problem);

// Cyclic coordinate descent, run until the largest coefficient change in a
// sweep drops below `tol`.
SparseCode encode_cd(const LassoProblem& problem, double tol = 1e-12,
                     int max_iter = 1'000'000);

// ||x - D c||_2 by dense evaluation.
double reconstruction_error(const Eigen::VectorXd& target, const SparseCode& code,
                            const Eigen::MatrixXd& atoms);

// sign(v) * max(|v| - alpha, 0)
double soft_threshold(double value, double alpha);

// Fills support, residual norm and objective from the coefficients.
SparseCode make_code(Eigen::VectorXd coefficients,
                     const Eigen::Ref<const Eigen::VectorXd>& target,
                     const Eigen::MatrixXd& atoms, double alpha);

}  // namespace mlfsc
