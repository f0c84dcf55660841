#include "ateavg/balancing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace ateavg::balancing {

Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double cumsum = 0.0;
  double tau = 0.0;
  int rho = 0;
  for (int j = 0; j < n; ++j) {
    cumsum += u[j];
    const double t = (cumsum - 1.0) / (j + 1);
    if (u[j] - t > 0.0) {
      rho = j + 1;
      tau = t;
    }
  }
  (void)rho;
  Eigen::VectorXd w(n);
  for (int i = 0; i < n; ++i) w[i] = std::max(v[i] - tau, 0.0);
  return w;
}

double balance_objective(const BalanceProblem& prob, const Eigen::VectorXd& w) {
  const double imb =
      (prob.target - prob.X_arm.transpose() * w).lpNorm<Eigen::Infinity>();
  return prob.zeta * w.squaredNorm() + (1.0 - prob.zeta) * imb * imb;
}

Eigen::VectorXd solve_balancing_weights(const BalanceProblem& prob) {
  const int n = static_cast<int>(prob.X_arm.rows());
  if (n < 2) throw ValidationError("balancing needs at least 2 units in the arm");
  if (!(prob.zeta > 0.0 && prob.zeta < 1.0))
    throw ValidationError("zeta must lie strictly between 0 and 1");
  if (!prob.X_arm.allFinite() || !prob.target.allFinite())
    throw ValidationError("balancing inputs contain non-finite values");
  if (prob.target.size() != prob.X_arm.cols())
    throw ValidationError("target length does not match covariate columns");

  Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / n);
  double f = balance_objective(prob, w);
  if (!std::isfinite(f)) throw SolverError("balancing objective is non-finite");

  // Backtrack from the given step until the projection decreases f.
  // Returns the accepted step and updates (w, f) on success, -1 on failure.
  const auto descend = [&](Eigen::VectorXd& w_cur, double& f_cur,
                           const Eigen::VectorXd& grad, double s0) -> double {
    double s = s0;
    for (int half = 0; half < 60; ++half) {
      const Eigen::VectorXd cand = project_to_simplex(w_cur - s * grad);
      const double fc = balance_objective(prob, cand);
      if (!std::isfinite(fc)) throw SolverError("balancing objective is non-finite");
      if (fc < f_cur) {
        w_cur = cand;
        f_cur = fc;
        return s;
      }
      s *= 0.5;
    }
    return -1.0;
  };

  const auto piece_gradient = [&](const Eigen::VectorXd& w_cur, double dj, int j) {
    Eigen::VectorXd g = 2.0 * prob.zeta * w_cur;
    g.noalias() -= 2.0 * (1.0 - prob.zeta) * dj * prob.X_arm.col(j);
    return g;
  };

  // Minimum-norm element of the convex hull of the columns of H, found by
  // enumerating support sets and solving each equality-constrained KKT
  // system.  Column counts here are tiny (at most 6), so brute force is
  // exact, deterministic, and cheap.
  const auto min_norm_in_hull = [](const Eigen::MatrixXd& H) {
    const int k = static_cast<int>(H.cols());
    const Eigen::MatrixXd gram = H.transpose() * H;
    double best_sq = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best = H.col(0);
    for (unsigned mask = 1; mask < (1u << k); ++mask) {
      std::vector<int> support;
      for (int j = 0; j < k; ++j)
        if (mask & (1u << j)) support.push_back(j);
      const int m = static_cast<int>(support.size());
      Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(m + 1, m + 1);
      for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) kkt(a, b) = 2.0 * gram(support[a], support[b]);
      kkt.block(0, m, m, 1).setOnes();
      kkt.block(m, 0, 1, m).setOnes();
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + 1);
      rhs[m] = 1.0;
      const Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
      if (!lu.isInvertible()) continue;
      const Eigen::VectorXd sol = lu.solve(rhs);
      if ((sol.head(m).array() < -1e-12).any()) continue;
      Eigen::VectorXd cand = Eigen::VectorXd::Zero(H.rows());
      for (int a = 0; a < m; ++a) cand += sol[a] * H.col(support[a]);
      const double sq = cand.squaredNorm();
      if (sq < best_sq) {
        best_sq = sq;
        best = cand;
      }
    }
    return best;
  };

  // Single-coordinate steps zigzag once several coordinates tie for the max,
  // so when progress stalls we descend along the steepest-descent direction
  // for the max of the leading pieces: the minimum-norm convex combination
  // of their gradients, projected onto the sum-zero tangent of the simplex.
  // Near the boundary that direction can point out of the feasible set and
  // get mangled by the projection, so each candidate set is also tried with
  // the gradients restricted to the face spanned by the nonzero weights.
  // Growing the candidate set from 2 pieces upward handles kinks of any
  // order seen at this scale.
  const auto escape_kink = [&]() {
    const Eigen::VectorXd d = prob.target - prob.X_arm.transpose() * w;
    const int p = static_cast<int>(d.size());
    if (p < 2) return false;
    std::vector<int> order(p);
    for (int j = 0; j < p; ++j) order[j] = j;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      const double da = std::abs(d[a]), db = std::abs(d[b]);
      return da != db ? da > db : a < b;
    });
    std::vector<int> free_ix;
    for (int i = 0; i < n; ++i)
      if (w[i] > 1e-12) free_ix.push_back(i);
    const bool on_face = static_cast<int>(free_ix.size()) < n;
    const int k_cap = std::min(p, 6);
    for (int k = 2; k <= k_cap; ++k) {
      Eigen::MatrixXd pieces(n, k);
      for (int a = 0; a < k; ++a) {
        Eigen::VectorXd g = piece_gradient(w, d[order[a]], order[a]);
        pieces.col(a) = g.array() - g.mean();  // tangent component only
      }
      for (int variant = 0; variant < (on_face ? 2 : 1); ++variant) {
        Eigen::MatrixXd basis = pieces;
        if (variant == 1) {
          // keep only the components that move the nonzero weights, centered
          // so the step stays on the current face of the simplex
          for (int a = 0; a < k; ++a) {
            double mean_free = 0.0;
            for (const int i : free_ix) mean_free += basis(i, a);
            mean_free /= static_cast<double>(free_ix.size());
            basis.col(a).setZero();
            for (const int i : free_ix) basis(i, a) = pieces(i, a) - mean_free;
          }
        }
        const Eigen::VectorXd dir = min_norm_in_hull(basis);
        Eigen::VectorXd w_try = w;
        double f_try = f;
        if (descend(w_try, f_try, dir, 1.0) > 0.0) {
          w = w_try;
          f = f_try;
          return true;
        }
      }
    }
    return false;
  };

  int quiet = 0;         // consecutive iterations with improvement below tol
  int weak_escapes = 0;  // consecutive escapes that improved by less than tol
  double step_hint = 1.0;  // warm start for the backtracking line search
  for (int it = 0; it < prob.max_iter; ++it) {
    if (quiet >= 10) {
      // A sub-tol escape can still reposition the iterate so that plain
      // descent resumes, so tolerate a handful of them before declaring the
      // stop rule genuinely met.
      const double f_before = f;
      if (!escape_kink()) break;
      if (f_before - f < prob.tol) {
        if (++weak_escapes >= 30) break;
      } else {
        weak_escapes = 0;
      }
      quiet = 0;
    }
    // linearize the infinity-norm term at its maximizing coordinate
    const Eigen::VectorXd d = prob.target - prob.X_arm.transpose() * w;
    int jstar = 0;
    for (int j = 1; j < d.size(); ++j)
      if (std::abs(d[j]) > std::abs(d[jstar])) jstar = j;
    const Eigen::VectorXd grad = piece_gradient(w, d[jstar], jstar);

    const double f_before = f;
    const double accepted = descend(w, f, grad, step_hint);
    if (accepted > 0.0) {
      step_hint = std::min(1.0, 4.0 * accepted);
      if (f_before - f < prob.tol) {
        ++quiet;
      } else {
        quiet = 0;
        weak_escapes = 0;
      }
    } else {
      ++quiet;
    }
  }
  return w;
}

}  // namespace ateavg::balancing
