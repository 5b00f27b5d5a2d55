#include "mlfsc/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mlfsc {

namespace {

void check_problem(const Eigen::Ref<const Eigen::VectorXd>& target,
                   const Eigen::MatrixXd& atoms, double alpha) {
  if (target.size() != atoms.rows())
    throw Error("lasso: target length " + std::to_string(target.size()) +
                " does not match dictionary dim " + std::to_string(atoms.rows()));
  if (!std::isfinite(alpha) || alpha < 0.0)
    throw Error("lasso: alpha must be finite and >= 0");
  if (!target.allFinite()) throw Error("lasso: target has non-finite entries");
}

}  // namespace

double soft_threshold(double value, double alpha) {
  if (value > alpha) return value - alpha;
  if (value < -alpha) return value + alpha;
  return 0.0;
}

SparseCode make_code(Eigen::VectorXd coefficients,
                     const Eigen::Ref<const Eigen::VectorXd>& target,
                     const Eigen::MatrixXd& atoms, double alpha) {
  SparseCode code;
  Eigen::VectorXd residual = target;
  double l1 = 0.0;
  for (Eigen::Index j = 0; j < coefficients.size(); ++j) {
    if (coefficients(j) == 0.0) continue;
    code.support.push_back(j);
    residual.noalias() -= coefficients(j) * atoms.col(j);
    l1 += std::abs(coefficients(j));
  }
  code.coefficients = std::move(coefficients);
  code.residual_norm = residual.norm();
  code.objective = 0.5 * residual.squaredNorm() + alpha * l1;
  return code;
}

LarsEncoder::LarsEncoder(const Eigen::MatrixXd& atoms)
    : atoms_(&atoms), gram_(atoms.transpose() * atoms) {
  if (atoms.cols() == 0 || atoms.rows() == 0) throw Error("lasso: empty dictionary");
  if (!atoms.allFinite()) throw Error("lasso: dictionary has non-finite entries");
}

SparseCode LarsEncoder::encode(const Eigen::Ref<const Eigen::VectorXd>& target,
                               double alpha) const {
  check_problem(target, *atoms_, alpha);
  // Copy into aligned storage so the arithmetic (and hence the bits) do not
  // depend on where the caller's vector lives.
  const Eigen::VectorXd x = target;
  const Eigen::VectorXd correlations = atoms_->transpose() * x;
  return make_code(solve_path(correlations, alpha), x, *atoms_, alpha);
}

// Homotopy in lambda = max |d_j^T r| from ||D^T x||_inf down to alpha. The
// active coefficients move along w = G_AA^{-1} s_A, which lowers every active
// |correlation| at unit rate. A step ends at the first of: an inactive atom
// catching up (enter), an active coefficient reaching zero (drop), or
// lambda reaching alpha.
Eigen::VectorXd LarsEncoder::solve_path(const Eigen::VectorXd& corr0,
                                        double alpha) const {
  using Eigen::Index;
  const Index n = gram_.rows();
  const Index max_active = std::min(atoms_->rows(), n);
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(n);

  // Entering ties are broken by the lowest index.
  Index first = 0;
  double lambda = std::abs(corr0(0));
  for (Index j = 1; j < n; ++j) {
    if (std::abs(corr0(j)) > lambda) {
      lambda = std::abs(corr0(j));
      first = j;
    }
  }
  if (!(lambda > alpha)) return beta;

  std::vector<Index> active;
  std::vector<double> signs;
  std::vector<char> is_active(n, 0);
  std::vector<char> blocked(n, 0);
  Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(max_active, max_active);

  // Appends atom j to the Cholesky factor of G_AA. Refuses atoms that are
  // numerically inside the span of the active set.
  auto try_add = [&](Index j, double sign) {
    const Index k = static_cast<Index>(active.size());
    Eigen::VectorXd cross(k);
    for (Index i = 0; i < k; ++i) cross(i) = gram_(active[i], j);
    Eigen::VectorXd z = cross;
    if (k > 0) chol.topLeftCorner(k, k).triangularView<Eigen::Lower>().solveInPlace(z);
    const double pivot = gram_(j, j) - z.squaredNorm();
    if (!(pivot > 1e-10 * gram_(j, j))) return false;
    chol.row(k).head(k) = z.transpose();
    chol(k, k) = std::sqrt(pivot);
    active.push_back(j);
    signs.push_back(sign);
    is_active[j] = 1;
    return true;
  };

  auto refactor = [&] {
    const Index k = static_cast<Index>(active.size());
    Eigen::MatrixXd sub(k, k);
    for (Index a = 0; a < k; ++a)
      for (Index b = 0; b < k; ++b) sub(a, b) = gram_(active[a], active[b]);
    chol.setZero();
    if (k > 0) chol.topLeftCorner(k, k) = Eigen::LLT<Eigen::MatrixXd>(sub).matrixL();
  };

  if (!try_add(first, corr0(first) >= 0.0 ? 1.0 : -1.0)) return beta;

  Eigen::VectorXd corr = corr0;
  // A dropped atom cannot come back with its old sign in the very next
  // segment (its correlation starts moving inward), but it can cross over
  // and enter with the opposite sign.
  Index just_dropped = -1;
  double dropped_sign = 0.0;
  const double slack = 1e-12 * std::max(1.0, lambda);
  const int max_steps = 8 * static_cast<int>(n) + 64;

  for (int step = 0; step < max_steps && !active.empty(); ++step) {
    const Index k = static_cast<Index>(active.size());
    Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(signs.data(), k);
    const auto factor = chol.topLeftCorner(k, k);
    factor.triangularView<Eigen::Lower>().solveInPlace(w);
    factor.transpose().triangularView<Eigen::Upper>().solveInPlace(w);

    Eigen::VectorXd drift = Eigen::VectorXd::Zero(n);
    for (Index i = 0; i < k; ++i) drift.noalias() += w(i) * gram_.col(active[i]);

    enum class Event { end, enter, drop } event = Event::end;
    double gamma = lambda - alpha;
    Index who = -1;
    double enter_sign = 1.0;

    if (k < max_active) {
      for (Index j = 0; j < n; ++j) {
        if (is_active[j] || blocked[j]) continue;
        const double c = corr(j);
        const double a = drift(j);
        if (1.0 - a > 1e-12 && !(j == just_dropped && dropped_sign > 0.0)) {
          const double g = std::max(0.0, (lambda - c) / (1.0 - a));
          if ((lambda - c) / (1.0 - a) > -slack && g < gamma) {
            gamma = g;
            event = Event::enter;
            who = j;
            enter_sign = 1.0;
          }
        }
        if (1.0 + a > 1e-12 && !(j == just_dropped && dropped_sign < 0.0)) {
          const double g = std::max(0.0, (lambda + c) / (1.0 + a));
          if ((lambda + c) / (1.0 + a) > -slack && g < gamma) {
            gamma = g;
            event = Event::enter;
            who = j;
            enter_sign = -1.0;
          }
        }
      }
    }
    for (Index i = 0; i < k; ++i) {
      const double b = beta(active[i]);
      if (b == 0.0 || w(i) == 0.0) continue;
      const double g = -b / w(i);
      if (g >= 0.0 && g < gamma) {
        gamma = g;
        event = Event::drop;
        who = i;
      }
    }

    for (Index i = 0; i < k; ++i) beta(active[i]) += gamma * w(i);
    lambda -= gamma;
    corr = corr0;
    for (Index i = 0; i < k; ++i) corr.noalias() -= beta(active[i]) * gram_.col(active[i]);

    if (event == Event::end) break;
    if (event == Event::drop) {
      const Index atom = active[who];
      dropped_sign = signs[who];
      beta(atom) = 0.0;
      is_active[atom] = 0;
      active.erase(active.begin() + who);
      signs.erase(signs.begin() + who);
      refactor();
      just_dropped = atom;
    } else {
      if (!try_add(who, enter_sign)) blocked[who] = 1;
      just_dropped = -1;
    }
    if (!(lambda > alpha)) break;
  }

  // The path solution satisfies G_AA beta_A = corr0_A - alpha s_A exactly in
  // exact arithmetic. Re-solving it directly removes accumulated round-off
  // as long as the signs agree.
  const Index k = static_cast<Index>(active.size());
  if (k > 0) {
    Eigen::MatrixXd sub(k, k);
    Eigen::VectorXd rhs(k);
    for (Index a = 0; a < k; ++a) {
      rhs(a) = corr0(active[a]) - alpha * signs[a];
      for (Index b = 0; b < k; ++b) sub(a, b) = gram_(active[a], active[b]);
    }
    const Eigen::VectorXd refined = sub.ldlt().solve(rhs);
    bool consistent = refined.allFinite();
    for (Index a = 0; a < k && consistent; ++a)
      consistent = refined(a) * signs[a] > 0.0;
    if (consistent)
      for (Index a = 0; a < k; ++a) beta(active[a]) = refined(a);
  }
  return beta;
}

SparseCode encode_lars(const LassoProblem& problem) {
  check_problem(problem.target, problem.atoms, problem.alpha);
  return LarsEncoder(problem.atoms).encode(problem.target, problem.alpha);
}

SparseCode encode_cd(const LassoProblem& problem, double tol, int max_iter) {
  const auto& atoms = problem.atoms;
  check_problem(problem.target, atoms, problem.alpha);
  if (!atoms.allFinite()) throw Error("lasso: dictionary has non-finite entries");
  const Eigen::MatrixXd gram = atoms.transpose() * atoms;
  // q = D^T (x - D c), maintained incrementally.
  Eigen::VectorXd q = atoms.transpose() * problem.target;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(atoms.cols());

  for (int sweep = 0; sweep < max_iter; ++sweep) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < c.size(); ++j) {
      const double g = gram(j, j);
      if (g <= 0.0) continue;
      const double old = c(j);
      const double updated = soft_threshold(q(j) + g * old, problem.alpha) / g;
      if (updated == old) continue;
      q.noalias() -= (updated - old) * gram.col(j);
      c(j) = updated;
      max_change = std::max(max_change, std::abs(updated - old));
    }
    if (max_change < tol) return make_code(std::move(c), problem.target, atoms, problem.alpha);
  }
  throw ConvergenceError(
      "coordinate descent did not converge in " + std::to_string(max_iter) + " sweeps",
      make_code(std::move(c), problem.target, atoms, problem.alpha));
}

double reconstruction_error(const Eigen::VectorXd& target, const SparseCode& code,
                            const Eigen::MatrixXd& atoms) {
  if (target.size() != atoms.rows() || code.coefficients.size() != atoms.cols())
    throw Error("reconstruction_error: dimension mismatch");
  return (target - atoms * code.coefficients).norm();
}

}  // namespace mlfsc
