#include "ateavg/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "ateavg/dataset.hpp"
#include "ateavg/rng.hpp"

namespace ateavg::glm {
namespace {

std::vector<int> nonzero_indices(const Eigen::VectorXd& beta) {
  std::vector<int> out;
  for (int j = 0; j < beta.size(); ++j)
    if (beta[j] != 0.0) out.push_back(j);
  return out;
}

// log(1 + exp(x)) without overflow
double log1pexp(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double binomial_nll(const Eigen::VectorXd& eta, const Eigen::VectorXd& y) {
  double nll = 0.0;
  for (int i = 0; i < eta.size(); ++i) nll += log1pexp(eta[i]) - y[i] * eta[i];
  return nll / eta.size();
}

// ------------------------- gaussian coordinate descent ----------------------
//
// State: residual r = y - alpha - X*beta kept current at all times.
// One coordinate update is the exact 1-D minimizer, so the penalized
// objective never increases.

struct GaussianWork {
  const Eigen::MatrixXd& X;
  const Eigen::VectorXd& y;
  Eigen::VectorXd colsq;  // X_j . X_j / n
  Eigen::VectorXd r;
  Eigen::VectorXd beta;
  double alpha = 0.0;
  std::vector<char> active;
  int cycles = 0;
  // pieces of the normal equations for the restricted exact solve: column
  // sums, X'y, and lazily cached cross-product columns X'X_j
  Eigen::VectorXd colsum, xty;
  double ysum = 0.0;
  Eigen::MatrixXd gram_cache;
  std::vector<int> gram_slot;
  int gram_used = 0;
  // Cholesky factor of the bordered support system [[1, c'], [c, X'X/n]]
  // (intercept first, then chol_cols in insertion order), maintained across
  // exact solves by border updates and Givens removals so each solve costs
  // O(k^2) instead of a fresh O(k^3) factorization
  std::vector<int> chol_cols;
  std::vector<int> chol_pos;
  Eigen::MatrixXd chol_L;
  bool chol_valid = true;

  GaussianWork(const Eigen::MatrixXd& X_, const Eigen::VectorXd& y_)
      : X(X_), y(y_), colsq(X_.cols()), beta(Eigen::VectorXd::Zero(X_.cols())),
        active(X_.cols(), 0), gram_slot(X_.cols(), -1),
        chol_pos(X_.cols(), -1), chol_L(Eigen::MatrixXd::Ones(1, 1)) {
    const double n_inv = 1.0 / X.rows();
    for (int j = 0; j < X.cols(); ++j) colsq[j] = X.col(j).squaredNorm() * n_inv;
    alpha = y.mean();
    r = y.array() - alpha;
    colsum = X.colwise().sum();
    xty.noalias() = X.transpose() * y;
    ysum = y.sum();
  }

  // X'X_j, computed on first use and kept for the rest of the path
  Eigen::MatrixXd::ConstColXpr gram_col(int j) {
    if (gram_slot[j] < 0) {
      if (gram_used == gram_cache.cols())
        gram_cache.conservativeResize(X.cols(),
                                      std::max<int>(32, 2 * gram_used));
      gram_cache.col(gram_used).noalias() = X.transpose() * X.col(j);
      gram_slot[j] = gram_used++;
    }
    return static_cast<const Eigen::MatrixXd&>(gram_cache).col(gram_slot[j]);
  }

  // Border update appending column j to the factor.  Pivots too small for a
  // stable solve are floored, which damps exactly the dependent directions;
  // once the system outgrows n every new pivot lands there, mirroring the
  // ridge the dense fallback would apply.
  bool chol_add(int j) {
    const int m = 1 + static_cast<int>(chol_cols.size());
    if (chol_L.rows() < m + 1) {
      const int cap = std::max<int>(16, 2 * static_cast<int>(chol_L.rows()));
      chol_L.conservativeResize(cap, cap);
    }
    const double n_inv = 1.0 / X.rows();
    Eigen::VectorXd v(m);
    v[0] = colsum[j] * n_inv;
    const auto gc = gram_col(j);
    for (int c = 0; c + 1 < m; ++c) v[c + 1] = gc[chol_cols[c]] * n_inv;
    chol_L.topLeftCorner(m, m).triangularView<Eigen::Lower>().solveInPlace(v);
    const double d = colsq[j];
    double piv2 = d - v.squaredNorm();
    if (!std::isfinite(piv2)) return false;
    const double floor_piv2 =
        (m >= X.rows() ? 1e-6 : 1e-8) * std::max(d, 1e-12);
    if (piv2 < floor_piv2) piv2 = floor_piv2;
    chol_L.row(m).head(m) = v.transpose();
    chol_L(m, m) = std::sqrt(piv2);
    chol_pos[j] = static_cast<int>(chol_cols.size());
    chol_cols.push_back(j);
    return true;
  }

  // Remove column j: delete its factor row, then restore triangularity with
  // Givens rotations over the trailing block.
  void chol_remove(int j) {
    const int q = 1 + chol_pos[j];
    const int m = 1 + static_cast<int>(chol_cols.size());
    for (int row = q; row + 1 < m; ++row)
      chol_L.row(row).head(m) = chol_L.row(row + 1).head(m);
    for (int t = q; t + 1 < m; ++t) {
      const double a = chol_L(t, t), b = chol_L(t, t + 1);
      const double rho = std::hypot(a, b);
      if (rho <= 0.0) continue;
      const double c = a / rho, s = b / rho;
      for (int row = t; row + 1 < m; ++row) {
        const double u = chol_L(row, t), v = chol_L(row, t + 1);
        chol_L(row, t) = c * u + s * v;
        chol_L(row, t + 1) = c * v - s * u;
      }
    }
    chol_cols.erase(chol_cols.begin() + (q - 1));
    chol_pos[j] = -1;
    for (int c = q - 1; c < static_cast<int>(chol_cols.size()); ++c)
      chol_pos[chol_cols[c]] = c;
  }

  void chol_reset() {
    chol_cols.clear();
    std::fill(chol_pos.begin(), chol_pos.end(), -1);
    chol_L(0, 0) = 1.0;
    chol_valid = true;
  }

  double objective(double lambda) const {
    return 0.5 * r.squaredNorm() / X.rows() + lambda * beta.lpNorm<1>();
  }

  // One pass over the given coordinates plus the intercept; returns the
  // largest coefficient change.
  template <typename Iter>
  double sweep(Iter begin, Iter end, double lambda) {
    const double n_inv = 1.0 / X.rows();
    double max_delta = 0.0;
    for (Iter it = begin; it != end; ++it) {
      const int j = *it;
      if (colsq[j] <= 0.0) continue;
      const double z = X.col(j).dot(r) * n_inv + colsq[j] * beta[j];
      const double bj = soft_threshold(z, lambda) / colsq[j];
      const double delta = bj - beta[j];
      if (delta != 0.0) {
        r.noalias() -= X.col(j) * delta;
        beta[j] = bj;
        active[j] |= bj != 0.0;
        max_delta = std::max(max_delta, std::abs(delta));
      }
    }
    const double m = r.mean();
    if (m != 0.0) {
      alpha += m;
      r.array() -= m;
      max_delta = std::max(max_delta, std::abs(m));
    }
    ++cycles;
    return max_delta;
  }
};

std::vector<int> all_indices(int p) {
  std::vector<int> idx(p);
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

// Worst-case stationarity violation: |grad_j + lambda sign(beta_j)| on the
// active set, max(0, |grad_j| - lambda) off it.
double subgradient_violation(const Eigen::VectorXd& grad,
                             const Eigen::VectorXd& beta, double lambda) {
  double viol = 0.0;
  for (int j = 0; j < beta.size(); ++j) {
    if (beta[j] != 0.0)
      viol = std::max(viol, std::abs(grad[j] + lambda * (beta[j] > 0 ? 1.0 : -1.0)));
    else
      viol = std::max(viol, std::max(0.0, std::abs(grad[j]) - lambda));
  }
  return viol;
}

// Accuracy targets for one lambda solve.  Fits the public API returns use the
// strict tier (and are polished afterwards); cross-validation fold fits and
// warm-up grid points only feed loss curves or warm starts, so they may stop
// at a relaxed stationarity level.
struct SolveTargets {
  double tol;         // max coefficient change treated as converged
  double kkt_exit;    // stationarity level treated as converged
  double kkt_accept;  // stationarity acceptable when the cycle budget runs out
};

SolveTargets strict_targets(const LassoOptions& opts) {
  return {opts.tol, 1e-7, 9e-7};
}

SolveTargets relaxed_targets(const LassoOptions& opts) {
  return {std::max(opts.tol, 3e-5), 1e-4, 3e-4};
}

// Exact minimizer over the current support with the signs held fixed, applied
// as far toward the candidate as the sign pattern allows.  Plain cycling
// crawls when the active Gram is ill-conditioned (correlated designs with
// p > n at small lambda); one linear solve lands on the restricted optimum
// instead.  The restricted objective is a convex quadratic minimized at the
// candidate, so any partial step decreases it; a direct objective comparison
// guards against an unreliable solve, reverting on failure.
bool exact_support_step(GaussianWork& w, double lambda) {
  const std::vector<int> support = nonzero_indices(w.beta);
  const int k = static_cast<int>(support.size());
  const int n = static_cast<int>(w.X.rows());
  if (k == 0) return false;
  const double n_inv = 1.0 / n;

  // Apply a sign-guarded partial step toward the candidate, keeping the
  // true objective monotone; revert and report failure otherwise.
  const auto apply = [&](const std::vector<int>& cols,
                         const Eigen::VectorXd& theta) {
    if (!theta.allFinite()) return false;
    double t = 1.0;
    for (int c = 0; c < k; ++c) {
      const double b = w.beta[cols[c]];
      const double cand = theta[c + 1];
      if (b * cand <= 0.0) t = std::min(t, b / (b - cand));
    }
    if (!(t > 0.0)) return false;

    const double obj0 = w.objective(lambda);
    const double alpha0 = w.alpha;
    Eigen::VectorXd beta0(k);
    for (int c = 0; c < k; ++c) beta0[c] = w.beta[cols[c]];
    const Eigen::VectorXd r0 = w.r;

    w.alpha += t * (theta[0] - w.alpha);
    w.r.array() += alpha0 - w.alpha;
    for (int c = 0; c < k; ++c) {
      const int j = cols[c];
      const double moved = w.beta[j] + t * (theta[c + 1] - w.beta[j]);
      // rounding can push a crossing coordinate a hair past zero; snap it
      const double nb = (moved * w.beta[j] < 0.0) ? 0.0 : moved;
      if (nb != w.beta[j]) {
        w.r.noalias() -= w.X.col(j) * (nb - w.beta[j]);
        w.beta[j] = nb;
      }
    }
    ++w.cycles;
    if (w.objective(lambda) > obj0 + 1e-12 * std::max(1.0, std::abs(obj0))) {
      w.alpha = alpha0;
      for (int c = 0; c < k; ++c) w.beta[cols[c]] = beta0[c];
      w.r = r0;
      return false;
    }
    return true;
  };

  // Fast path: bring the maintained factor in sync with the support and
  // solve by two triangular passes.
  if (!w.chol_valid) w.chol_reset();
  for (int c = static_cast<int>(w.chol_cols.size()) - 1; c >= 0; --c)
    if (w.beta[w.chol_cols[c]] == 0.0) w.chol_remove(w.chol_cols[c]);
  for (const int j : support)
    if (w.chol_pos[j] < 0 && !(w.chol_valid = w.chol_add(j))) break;
  if (w.chol_valid) {
    const int m = 1 + k;
    Eigen::VectorXd theta(m);
    theta[0] = w.ysum * n_inv;
    for (int c = 0; c < k; ++c) {
      const int j = w.chol_cols[c];
      theta[c + 1] =
          w.xty[j] * n_inv - lambda * (w.beta[j] > 0 ? 1.0 : -1.0);
    }
    const auto L = w.chol_L.topLeftCorner(m, m);
    L.triangularView<Eigen::Lower>().solveInPlace(theta);
    L.transpose().triangularView<Eigen::Upper>().solveInPlace(theta);
    if (apply(w.chol_cols, theta)) return true;
    w.chol_valid = false;  // possible drift; rebuild fresh next time
  }

  // Fallback: dense ridge-damped solve of the same system.  The shift keeps
  // it usable past the point where the support outgrows n, and the objective
  // guard in apply() decides whether the damped step helped.
  Eigen::MatrixXd G(k + 1, k + 1);
  Eigen::VectorXd rhs(k + 1);
  G(0, 0) = 1.0;
  rhs[0] = w.ysum * n_inv;
  for (int c = 0; c < k; ++c) {
    const int j = support[c];
    G(0, c + 1) = G(c + 1, 0) = w.colsum[j] * n_inv;
    rhs[c + 1] =
        w.xty[j] * n_inv - lambda * (w.beta[j] > 0 ? 1.0 : -1.0);
    const auto gc = w.gram_col(j);
    for (int c2 = 0; c2 <= c; ++c2)
      G(c + 1, c2 + 1) = G(c2 + 1, c + 1) = gc[support[c2]] * n_inv;
  }
  const double shift = (k + 1 > n ? 1e-6 : 1e-8) *
                       std::max(G.diagonal().mean(), 1e-12);
  G.diagonal().array() += shift;
  return apply(support, G.ldlt().solve(rhs));
}

// Fast path for warm-started grid steps: alternate a gradient screen with
// restricted exact solves, skipping coordinate descent entirely.  The support
// shifts by a handful of columns between neighbouring lambdas, so this
// usually settles in a round or two; anything stubborn falls back to the
// cycling solver below.
bool gaussian_active_newton(GaussianWork& w, double lambda,
                            const SolveTargets& tgt) {
  const int p = static_cast<int>(w.X.cols());
  const double n_inv = 1.0 / w.X.rows();
  double prev_viol = std::numeric_limits<double>::infinity();
  for (int round = 0; round < 3; ++round) {
    const Eigen::VectorXd grad = -(w.X.transpose() * w.r) * n_inv;
    const double viol = subgradient_violation(grad, w.beta, lambda);
    if (viol <= tgt.kkt_exit) return true;
    // Without roughly geometric contraction the crossings are churning, and
    // the cycling solver copes with that better.
    if (viol > 0.7 * prev_viol) return false;
    prev_viol = viol;
    std::vector<int> joiners;
    for (int j = 0; j < p; ++j)
      if (w.beta[j] == 0.0 && std::abs(grad[j]) > lambda) joiners.push_back(j);
    if (!joiners.empty()) w.sweep(joiners.begin(), joiners.end(), lambda);
    if (!exact_support_step(w, lambda) && joiners.empty()) return false;
  }
  return false;
}

// Solve at a single lambda given a warm state.  Active-set cycling with full
// sweeps to admit joiners; terminates when a full sweep moves nothing beyond
// tol or the solution is stationary, with restricted exact solves assisting
// whenever plain cycling stalls.
void gaussian_solve(GaussianWork& w, double lambda, const LassoOptions& opts,
                    const SolveTargets& tgt) {
  const int p = static_cast<int>(w.X.cols());
  // The cycle cap applies to this lambda alone; w.cycles keeps the running
  // total across a warm-started path for reporting.
  const int start = w.cycles;
  const auto spent = [&] { return w.cycles - start; };
  const double n_inv = 1.0 / w.X.rows();
  if (gaussian_active_newton(w, lambda, tgt)) return;
  const auto kkt = [&] {
    const Eigen::VectorXd grad = -(w.X.transpose() * w.r) * n_inv;
    return subgradient_violation(grad, w.beta, lambda);
  };
  double last_obj = std::numeric_limits<double>::infinity();
  while (true) {
    if (spent() > opts.max_cycles) {
      // On correlated p > n designs the iterates can keep drifting along
      // near-null directions of the active Gram without the per-cycle change
      // ever reaching tol.  Accept the solution if it is stationary enough
      // for this tier; otherwise report the failure.
      const double viol = kkt();
      if (viol <= tgt.kkt_accept) return;
      std::ostringstream msg;
      msg << "lasso did not converge in " << opts.max_cycles
          << " cycles (lambda=" << lambda
          << ", max subgradient violation=" << viol << ")";
      throw SolverError(msg.str());
    }
    // cycle the active set, in bounded chunks so a crawling instance still
    // reaches the stationarity check and the exact-solve assist below; a
    // stalled contraction hands off to the assist right away
    std::vector<int> act;
    for (int j = 0; j < p; ++j)
      if (w.active[j]) act.push_back(j);
    double delta;
    double prev_delta = std::numeric_limits<double>::infinity();
    int chunk = 0;
    do {
      delta = w.sweep(act.begin(), act.end(), lambda);
      if (delta > 0.8 * prev_delta) break;
      prev_delta = delta;
    } while (delta >= tgt.tol && ++chunk < 8 && spent() <= opts.max_cycles);

    // One gradient pass covers both the stationarity test and the work a full
    // sweep would do: an idle coordinate moves under a sweep exactly when its
    // gradient exceeds lambda, so only those violators need a visit.
    const Eigen::VectorXd grad = -(w.X.transpose() * w.r) * n_inv;
    const double viol = subgradient_violation(grad, w.beta, lambda);
    if (viol <= tgt.kkt_exit) return;
    // Accept the budget-exhaustion stationarity level early once a moderate
    // effort has gone in; grinding from there to the exit level is pure cost
    // on the near-singular fits deep in the path.
    if (viol <= tgt.kkt_accept && spent() >= 48) return;
    std::vector<int> joiners;
    for (int j = 0; j < p; ++j)
      if (w.beta[j] == 0.0 && std::abs(grad[j]) > lambda) joiners.push_back(j);
    double jdelta = 0.0;
    if (!joiners.empty()) jdelta = w.sweep(joiners.begin(), joiners.end(), lambda);
    const double obj = w.objective(lambda);
    if (obj > last_obj + 1e-10 * std::max(1.0, std::abs(last_obj)))
      throw SolverError("coordinate descent objective increased");
    last_obj = obj;
    // The classic exit: one more pass would move every coefficient less than
    // tol.  Stationarity above covers the rest; crawling fits fall through to
    // the exact-solve assist.
    if (delta < tgt.tol && jdelta < tgt.tol) return;
    exact_support_step(w, lambda);
  }
}

// Tighten until the KKT residual is comfortably under the 1e-6 contract.
void gaussian_polish(GaussianWork& w, double lambda, const LassoOptions& opts) {
  const double n_inv = 1.0 / w.X.rows();
  const auto kkt = [&] {
    const Eigen::VectorXd grad = -(w.X.transpose() * w.r) * n_inv;
    return subgradient_violation(grad, w.beta, lambda);
  };
  for (int round = 0; round < 50; ++round) {
    if (kkt() <= 1e-7) return;
    const std::vector<int> all = all_indices(static_cast<int>(w.X.cols()));
    w.sweep(all.begin(), all.end(), lambda);
  }
  if (kkt() <= 9e-7) return;
  throw SolverError("lasso KKT residual did not reach tolerance");
}

// ------------------------- binomial coordinate descent ----------------------
//
// Outer IRLS loop refreshing weights and working response, inner penalized
// weighted least squares by coordinate descent.  A step-halving guard keeps
// the penalized deviance non-increasing across outer iterations.

struct BinomialWork {
  const Eigen::MatrixXd& X;
  const Eigen::VectorXd& y;
  Eigen::VectorXd beta;
  double alpha = 0.0;
  Eigen::VectorXd eta;
  std::vector<char> active;
  int cycles = 0;

  BinomialWork(const Eigen::MatrixXd& X_, const Eigen::VectorXd& y_)
      : X(X_), y(y_), beta(Eigen::VectorXd::Zero(X_.cols())),
        active(X_.cols(), 0) {
    const double ybar = std::clamp(y.mean(), 1e-10, 1.0 - 1e-10);
    alpha = std::log(ybar / (1.0 - ybar));
    eta = Eigen::VectorXd::Constant(y.size(), alpha);
  }

  double objective(double lambda) const {
    return binomial_nll(eta, y) + lambda * beta.lpNorm<1>();
  }
};

// Weighted analogue of exact_support_step for the penalized weighted least
// squares subproblem: exact minimizer over the current support with signs
// fixed, guarded by the subproblem objective.  r is the maintained weighted
// residual W(z - alpha - X beta); wz = W z stays fixed within one outer
// iteration.
bool pwls_exact_step(BinomialWork& w, double lambda, const Eigen::VectorXd& wgt,
                     const Eigen::VectorXd& wz, double sw, Eigen::VectorXd& r) {
  const std::vector<int> support = nonzero_indices(w.beta);
  const int k = static_cast<int>(support.size());
  const int n = static_cast<int>(w.X.rows());
  if (k == 0 || k + 1 > n) return false;
  const double n_inv = 1.0 / n;
  Eigen::MatrixXd Xs(n, k);
  for (int c = 0; c < k; ++c) Xs.col(c) = w.X.col(support[c]);
  Eigen::MatrixXd G(k + 1, k + 1);
  Eigen::VectorXd rhs(k + 1);
  G(0, 0) = sw;
  rhs[0] = wz.sum() * n_inv;
  const Eigen::MatrixXd WXs = wgt.asDiagonal() * Xs;
  G.block(1, 1, k, k).noalias() = (Xs.transpose() * WXs) * n_inv;
  for (int c = 0; c < k; ++c) {
    G(0, c + 1) = G(c + 1, 0) = wgt.dot(Xs.col(c)) * n_inv;
    rhs[c + 1] = wz.dot(Xs.col(c)) * n_inv -
                 lambda * (w.beta[support[c]] > 0 ? 1.0 : -1.0);
  }
  const Eigen::VectorXd theta = G.ldlt().solve(rhs);
  if (!theta.allFinite()) return false;

  double t = 1.0;
  for (int c = 0; c < k; ++c) {
    const double b = w.beta[support[c]];
    if (b * theta[c + 1] <= 0.0) t = std::min(t, b / (b - theta[c + 1]));
  }
  if (!(t > 0.0)) return false;

  const auto subproblem_obj = [&] {
    double q = 0.0;
    for (int i = 0; i < n; ++i) q += r[i] * r[i] / wgt[i];
    return 0.5 * q * n_inv + lambda * w.beta.lpNorm<1>();
  };
  const double obj0 = subproblem_obj();
  const double alpha0 = w.alpha;
  Eigen::VectorXd beta0(k);
  for (int c = 0; c < k; ++c) beta0[c] = w.beta[support[c]];
  const Eigen::VectorXd r0 = r;

  w.alpha += t * (theta[0] - w.alpha);
  for (int c = 0; c < k; ++c) {
    const int j = support[c];
    const double moved = w.beta[j] + t * (theta[c + 1] - w.beta[j]);
    w.beta[j] = (moved * w.beta[j] < 0.0) ? 0.0 : moved;
  }
  Eigen::VectorXd lin = Eigen::VectorXd::Constant(n, w.alpha);
  for (int c = 0; c < k; ++c)
    lin.noalias() += Xs.col(c) * w.beta[support[c]];
  r = wz - wgt.cwiseProduct(lin);
  ++w.cycles;
  if (subproblem_obj() > obj0 + 1e-12 * std::max(1.0, std::abs(obj0))) {
    w.alpha = alpha0;
    for (int c = 0; c < k; ++c) w.beta[support[c]] = beta0[c];
    r = r0;
    return false;
  }
  return true;
}

void binomial_solve(BinomialWork& w, double lambda, const LassoOptions& opts,
                    const SolveTargets& tgt) {
  const int n = static_cast<int>(w.X.rows());
  const int p = static_cast<int>(w.X.cols());
  const double n_inv = 1.0 / n;
  constexpr double kMinWeight = 1e-5;
  // As in the gaussian solver, the cycle cap is per lambda.
  const int start = w.cycles;
  const auto spent = [&] { return w.cycles - start; };
  const auto kkt = [&] {
    Eigen::VectorXd prob(n);
    for (int i = 0; i < n; ++i)
      prob[i] = expit(std::clamp(w.eta[i], -30.0, 30.0));
    const Eigen::VectorXd grad = (w.X.transpose() * (prob - w.y)) * n_inv;
    return subgradient_violation(grad, w.beta, lambda);
  };
  double last_obj = w.objective(lambda);

  for (int outer = 0; outer < 100; ++outer) {
    if (spent() > opts.max_cycles) {
      // Accept a stationary iterate inside this tier's tolerance even when
      // the per-cycle coefficient change stalls; see the gaussian solver.
      const double viol = kkt();
      if (viol <= tgt.kkt_accept) return;
      std::ostringstream msg;
      msg << "binomial lasso did not converge in " << opts.max_cycles
          << " cycles (lambda=" << lambda
          << ", max subgradient violation=" << viol << ")";
      throw SolverError(msg.str());
    }
    // quadratic approximation at the current eta
    Eigen::VectorXd prob(n), wgt(n), r(n);
    for (int i = 0; i < n; ++i) {
      const double e = std::clamp(w.eta[i], -30.0, 30.0);
      prob[i] = expit(e);
      wgt[i] = std::max(prob[i] * (1.0 - prob[i]), kMinWeight);
      // weighted residual of the working response z = eta + (y-p)/w
      r[i] = (w.y[i] - prob[i]);
    }
    // r holds w*(z - alpha - X beta) = (y - p) at the expansion point
    const Eigen::VectorXd wz = wgt.cwiseProduct(w.eta) + r;
    Eigen::VectorXd swx(p);
    for (int j = 0; j < p; ++j)
      swx[j] = wgt.dot(w.X.col(j).cwiseProduct(w.X.col(j))) * n_inv;
    const double sw = wgt.sum() * n_inv;

    const double alpha0 = w.alpha;
    const Eigen::VectorXd beta0 = w.beta;

    // inner coordinate descent on the weighted problem
    const auto inner_sweep = [&](const std::vector<int>& coords) {
      double max_delta = 0.0;
      for (int j : coords) {
        if (swx[j] <= 0.0) continue;
        const double z = w.X.col(j).dot(r) * n_inv + swx[j] * w.beta[j];
        const double bj = soft_threshold(z, lambda) / swx[j];
        const double delta = bj - w.beta[j];
        if (delta != 0.0) {
          r.noalias() -= wgt.cwiseProduct(w.X.col(j)) * delta;
          w.beta[j] = bj;
          w.active[j] |= bj != 0.0;
          max_delta = std::max(max_delta, std::abs(delta));
        }
      }
      const double da = r.sum() * n_inv / sw;
      if (da != 0.0) {
        w.alpha += da;
        r.noalias() -= wgt * da;
        max_delta = std::max(max_delta, std::abs(da));
      }
      ++w.cycles;
      return max_delta;
    };

    // bounded chunks of active-set cycling with exact-solve assists; a
    // gradient screen then admits idle coordinates the way a full sweep
    // would, since one moves exactly when its gradient exceeds lambda
    int assist_failures = 0;
    while (true) {
      std::vector<int> act;
      for (int j = 0; j < p; ++j)
        if (w.active[j]) act.push_back(j);
      double delta;
      double prev_delta = std::numeric_limits<double>::infinity();
      int chunk = 0;
      do {
        delta = inner_sweep(act);
        if (delta > 0.8 * prev_delta) break;
        prev_delta = delta;
      } while (delta >= tgt.tol && ++chunk < 8 && spent() <= opts.max_cycles);
      if (delta >= tgt.tol && spent() <= opts.max_cycles &&
          assist_failures < 2) {
        if (pwls_exact_step(w, lambda, wgt, wz, sw, r))
          assist_failures = 0;
        else
          ++assist_failures;
        continue;
      }
      const Eigen::VectorXd g = (w.X.transpose() * r) * n_inv;
      std::vector<int> joiners;
      for (int j = 0; j < p; ++j)
        if (w.beta[j] == 0.0 && std::abs(g[j]) > lambda) joiners.push_back(j);
      double jdelta = 0.0;
      if (!joiners.empty()) jdelta = inner_sweep(joiners);
      if ((delta < tgt.tol && jdelta < tgt.tol) || spent() > opts.max_cycles)
        break;
    }

    // refresh eta; step-halve toward the previous iterate if the penalized
    // deviance went up (the quadratic model can overshoot)
    w.eta = Eigen::VectorXd::Constant(n, w.alpha);
    w.eta.noalias() += w.X * w.beta;
    double obj = w.objective(lambda);
    if (obj > last_obj + 1e-12 * std::max(1.0, std::abs(last_obj))) {
      const double a_full = w.alpha;
      const Eigen::VectorXd b_full = w.beta;
      double best_obj = obj;
      double best_s = 1.0;
      for (double s = 0.5; s > 1e-4; s *= 0.5) {
        const double a_try = alpha0 + s * (a_full - alpha0);
        const Eigen::VectorXd b_try = beta0 + s * (b_full - beta0);
        Eigen::VectorXd eta_try = Eigen::VectorXd::Constant(n, a_try);
        eta_try.noalias() += w.X * b_try;
        const double o_try = binomial_nll(eta_try, w.y) + lambda * b_try.lpNorm<1>();
        if (o_try < best_obj) {
          best_obj = o_try;
          best_s = s;
          if (o_try <= last_obj) break;
        }
      }
      w.alpha = alpha0 + best_s * (a_full - alpha0);
      w.beta = beta0 + best_s * (b_full - beta0);
      w.eta = Eigen::VectorXd::Constant(n, w.alpha);
      w.eta.noalias() += w.X * w.beta;
      obj = w.objective(lambda);
      if (obj > last_obj + 1e-10 * std::max(1.0, std::abs(last_obj)))
        throw SolverError("penalized deviance increased");
    }
    last_obj = obj;

    double coef_change = std::abs(w.alpha - alpha0);
    for (int j = 0; j < p; ++j)
      coef_change = std::max(coef_change, std::abs(w.beta[j] - beta0[j]));
    if (coef_change < tgt.tol) return;
    const double viol = kkt();
    if (viol <= tgt.kkt_exit) return;
    // As in the gaussian solver: settle for the acceptance level once a
    // moderate effort has gone in.
    if (viol <= tgt.kkt_accept && spent() >= 48) return;
  }
}

void binomial_polish(BinomialWork& w, double lambda, const LassoOptions& opts) {
  const double n_inv = 1.0 / w.X.rows();
  const auto kkt = [&] {
    Eigen::VectorXd prob(w.eta.size());
    for (int i = 0; i < w.eta.size(); ++i)
      prob[i] = expit(std::clamp(w.eta[i], -30.0, 30.0));
    const Eigen::VectorXd grad = (w.X.transpose() * (prob - w.y)) * n_inv;
    return subgradient_violation(grad, w.beta, lambda);
  };
  for (int round = 0; round < 50; ++round) {
    if (kkt() <= 1e-7) return;
    binomial_solve(w, lambda, opts, strict_targets(opts));
  }
  if (kkt() <= 9e-7) return;
  throw SolverError("binomial lasso KKT residual did not reach tolerance");
}

}  // namespace

// --------------------------------- OLS --------------------------------------

LinearFit fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  bool robust_se) {
  const int n = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());
  if (p + 1 >= n)
    throw SolverError("OLS needs more rows than columns: n=" + std::to_string(n) +
                      ", columns with intercept=" + std::to_string(p + 1));
  Eigen::MatrixXd D(n, p + 1);
  D.col(0).setOnes();
  D.rightCols(p) = X;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(D);
  qr.setThreshold(1e-10);
  if (qr.rank() < p + 1) {
    std::ostringstream msg;
    msg << "design matrix is rank deficient; collinear columns:";
    const auto perm = qr.colsPermutation().indices();
    for (int k = qr.rank(); k < p + 1; ++k) {
      const int col = perm[k];
      msg << ' ' << (col == 0 ? std::string("intercept")
                              : "X[" + std::to_string(col - 1) + "]");
    }
    throw SolverError(msg.str());
  }
  const Eigen::VectorXd coef = qr.solve(y);
  const Eigen::VectorXd resid = y - D * coef;
  const int k = p + 1;

  const Eigen::MatrixXd xtx_inv =
      (D.transpose() * D).ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  Eigen::VectorXd se(k);
  if (robust_se) {
    // HC1: (X'X)^-1 X' diag(e^2) X (X'X)^-1 * n/(n-k)
    const Eigen::MatrixXd meat =
        D.transpose() * resid.array().square().matrix().asDiagonal() * D;
    const Eigen::MatrixXd cov =
        xtx_inv * meat * xtx_inv * (static_cast<double>(n) / (n - k));
    se = cov.diagonal().array().max(0.0).sqrt();
  } else {
    const double s2 = resid.squaredNorm() / (n - k);
    se = (xtx_inv.diagonal().array() * s2).max(0.0).sqrt();
  }

  LinearFit fit;
  fit.family = Family::gaussian;
  fit.intercept = coef[0];
  fit.coefficients = coef.tail(p);
  fit.selected = nonzero_indices(fit.coefficients);
  fit.objective = 0.5 * resid.squaredNorm() / n;
  fit.intercept_se = se[0];
  fit.standard_errors = se.tail(p);
  return fit;
}

// ---------------------------- logistic MLE ----------------------------------

LinearFit fit_logistic_mle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const int n = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());
  if (p + 1 >= n)
    throw SolverError("logistic MLE needs more rows than columns");
  Eigen::MatrixXd D(n, p + 1);
  D.col(0).setOnes();
  D.rightCols(p) = X;

  Eigen::VectorXd coef = Eigen::VectorXd::Zero(p + 1);
  const double ybar = std::clamp(y.mean(), 1e-10, 1.0 - 1e-10);
  coef[0] = std::log(ybar / (1.0 - ybar));

  int iter = 0;
  for (; iter < 100; ++iter) {
    const Eigen::VectorXd eta = D * coef;
    Eigen::VectorXd prob(n), wgt(n);
    for (int i = 0; i < n; ++i) {
      prob[i] = expit(std::clamp(eta[i], -30.0, 30.0));
      wgt[i] = std::max(prob[i] * (1.0 - prob[i]), 1e-10);
    }
    const Eigen::MatrixXd H = D.transpose() * wgt.asDiagonal() * D;
    const Eigen::VectorXd g = D.transpose() * (y - prob);
    const Eigen::VectorXd step = H.ldlt().solve(g);
    if (!step.allFinite()) throw SolverError("logistic IRLS produced non-finite step");
    coef += step;
    if (coef.lpNorm<Eigen::Infinity>() > 30.0)
      throw SolverError("logistic separation: coefficient magnitude exceeded 30");
    if (step.lpNorm<Eigen::Infinity>() < 1e-8) break;
  }
  if (iter == 100)
    throw SolverError("logistic IRLS did not converge in 100 iterations");

  LinearFit fit;
  fit.family = Family::binomial;
  fit.intercept = coef[0];
  fit.coefficients = coef.tail(p);
  fit.selected = nonzero_indices(fit.coefficients);
  fit.objective = binomial_nll(D * coef, y);
  fit.iterations = iter + 1;
  return fit;
}

// ------------------------------- lasso ---------------------------------------

double lasso_lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const Eigen::VectorXd centered = y.array() - y.mean();
  return (X.transpose() * centered).lpNorm<Eigen::Infinity>() / X.rows();
}

LinearFit intercept_only_fit(const Eigen::VectorXd& y, Family family, int p) {
  LinearFit fit;
  fit.family = family;
  fit.coefficients = Eigen::VectorXd::Zero(p);
  if (family == Family::gaussian) {
    fit.intercept = y.mean();
    fit.objective = 0.5 * (y.array() - fit.intercept).square().sum() / y.size();
  } else {
    const double ybar = std::clamp(y.mean(), 1e-10, 1.0 - 1e-10);
    fit.intercept = std::log(ybar / (1.0 - ybar));
    fit.objective =
        binomial_nll(Eigen::VectorXd::Constant(y.size(), fit.intercept), y);
  }
  return fit;
}

namespace {

LinearFit finish_gaussian(GaussianWork& w, double lambda) {
  LinearFit fit;
  fit.family = Family::gaussian;
  fit.intercept = w.alpha;
  fit.coefficients = w.beta;
  fit.selected = nonzero_indices(w.beta);
  fit.objective = w.objective(lambda);
  fit.lambda = lambda;
  fit.iterations = w.cycles;
  return fit;
}

LinearFit finish_binomial(BinomialWork& w, double lambda) {
  LinearFit fit;
  fit.family = Family::binomial;
  fit.intercept = w.alpha;
  fit.coefficients = w.beta;
  fit.selected = nonzero_indices(w.beta);
  fit.objective = w.objective(lambda);
  fit.lambda = lambda;
  fit.iterations = w.cycles;
  return fit;
}

Eigen::VectorXd make_grid(double lambda_max, int points = 100,
                          double ratio = 1e-3) {
  Eigen::VectorXd grid(points);
  const double step = std::log(ratio) / (points - 1);
  for (int i = 0; i < points; ++i) grid[i] = lambda_max * std::exp(step * i);
  return grid;
}

}  // namespace

LinearFit fit_lasso(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    Family family, double lambda, const LassoOptions& opts) {
  if (lambda < 0.0) throw std::invalid_argument("lambda must be nonnegative");
  // At or above lambda_max the null model is exactly optimal (the zero
  // vector satisfies the subgradient condition by definition of lambda_max).
  if (lambda > 0.0 && lambda >= lasso_lambda_max(X, y)) {
    LinearFit fit = intercept_only_fit(y, family, static_cast<int>(X.cols()));
    fit.lambda = lambda;
    return fit;
  }
  if (family == Family::gaussian) {
    GaussianWork w(X, y);
    // warm down from lambda_max for stability at small penalties
    const double lmax = lasso_lambda_max(X, y);
    if (lmax > lambda) {
      const Eigen::VectorXd grid = make_grid(lmax, 20, std::max(lambda / lmax, 1e-6));
      for (int i = 0; i < grid.size() && grid[i] > lambda; ++i)
        gaussian_solve(w, grid[i], opts, relaxed_targets(opts));
    }
    gaussian_solve(w, lambda, opts, strict_targets(opts));
    gaussian_polish(w, lambda, opts);
    return finish_gaussian(w, lambda);
  }
  if (lambda == 0.0)
    throw std::invalid_argument("binomial lasso requires lambda > 0");
  BinomialWork w(X, y);
  const double lmax = lasso_lambda_max(X, y);
  if (lmax > lambda) {
    const Eigen::VectorXd grid = make_grid(lmax, 20, std::max(lambda / lmax, 1e-6));
    for (int i = 0; i < grid.size() && grid[i] > lambda; ++i)
      binomial_solve(w, grid[i], opts, relaxed_targets(opts));
  }
  binomial_solve(w, lambda, opts, strict_targets(opts));
  binomial_polish(w, lambda, opts);
  return finish_binomial(w, lambda);
}

CvResult select_lambda_cv(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          Family family, int K, std::uint64_t seed,
                          const LassoOptions& opts) {
  const int n = static_cast<int>(X.rows());
  const int p = static_cast<int>(X.cols());
  if (K < 2) throw std::invalid_argument("cross-validation needs K >= 2");

  const double lmax = lasso_lambda_max(X, y);
  if (!(lmax > 0.0))
    throw std::invalid_argument(
        "lambda_max is zero: response is orthogonal to every column");
  const Eigen::VectorXd grid = make_grid(lmax);
  const int L = static_cast<int>(grid.size());

  // fold labels; stratified for binomial so both classes appear everywhere
  rng::Philox gen(rng::derive_key(rng::tag("lasso-cv"), seed));
  std::vector<int> fold;
  int K_eff = std::min(K, n);
  if (family == Family::binomial) {
    int n1 = 0;
    for (int i = 0; i < n; ++i) n1 += y[i] == 1.0 ? 1 : 0;
    const int n0 = n - n1;
    K_eff = std::min({K, n1, n0});
    if (K_eff < 2)
      throw SolverError("binomial CV needs at least 2 units of each class");
    std::vector<int> cls(n);
    for (int i = 0; i < n; ++i) cls[i] = y[i] == 1.0 ? 1 : 0;
    fold = folds::stratified(cls, K_eff, gen);
  } else {
    fold = folds::balanced(n, K_eff, gen);
  }

  Eigen::VectorXd total_loss = Eigen::VectorXd::Zero(L);
  for (int f = 1; f <= K_eff; ++f) {
    std::vector<int> train, test;
    for (int i = 0; i < n; ++i) (fold[i] == f ? test : train).push_back(i);
    Eigen::MatrixXd Xtr(train.size(), p), Xte(test.size(), p);
    Eigen::VectorXd ytr(train.size()), yte(test.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      Xtr.row(i) = X.row(train[i]);
      ytr[i] = y[train[i]];
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
      Xte.row(i) = X.row(test[i]);
      yte[i] = y[test[i]];
    }

    if (family == Family::gaussian) {
      GaussianWork w(Xtr, ytr);
      for (int l = 0; l < L; ++l) {
        gaussian_solve(w, grid[l], opts, relaxed_targets(opts));
        const Eigen::VectorXd pred =
            (Xte * w.beta).array() + w.alpha;
        total_loss[l] += (yte - pred).squaredNorm();
      }
    } else {
      BinomialWork w(Xtr, ytr);
      for (int l = 0; l < L; ++l) {
        binomial_solve(w, grid[l], opts, relaxed_targets(opts));
        const Eigen::VectorXd eta = (Xte * w.beta).array() + w.alpha;
        for (int i = 0; i < eta.size(); ++i) {
          const double pr = std::clamp(expit(eta[i]), 1e-10, 1.0 - 1e-10);
          total_loss[l] -= 2.0 * (yte[i] * std::log(pr) +
                                  (1.0 - yte[i]) * std::log(1.0 - pr));
        }
      }
    }
  }

  CvResult cv;
  cv.lambda_grid = grid;
  cv.cv_error = total_loss / n;
  if (!cv.cv_error.allFinite())
    throw SolverError("cross-validation produced non-finite losses");
  int best = 0;
  for (int l = 1; l < L; ++l)
    if (cv.cv_error[l] < cv.cv_error[best]) best = l;
  cv.lambda_min = grid[best];
  cv.folds = K_eff;
  return cv;
}

CvFit fit_lasso_cv(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   Family family, int K, std::uint64_t seed,
                   const LassoOptions& opts) {
  CvResult cv = select_lambda_cv(X, y, family, K, seed, opts);
  // warm path on the full data down to lambda_min; only the returned fit at
  // lambda_min needs the strict tier
  if (family == Family::gaussian) {
    GaussianWork w(X, y);
    for (int l = 0; l < cv.lambda_grid.size(); ++l) {
      const bool at_min = cv.lambda_grid[l] == cv.lambda_min;
      gaussian_solve(w, cv.lambda_grid[l], opts,
                     at_min ? strict_targets(opts) : relaxed_targets(opts));
      if (at_min) break;
    }
    gaussian_polish(w, cv.lambda_min, opts);
    LinearFit fit = finish_gaussian(w, cv.lambda_min);
    return {std::move(cv), std::move(fit)};
  }
  BinomialWork w(X, y);
  for (int l = 0; l < cv.lambda_grid.size(); ++l) {
    const bool at_min = cv.lambda_grid[l] == cv.lambda_min;
    binomial_solve(w, cv.lambda_grid[l], opts,
                   at_min ? strict_targets(opts) : relaxed_targets(opts));
    if (at_min) break;
  }
  binomial_polish(w, cv.lambda_min, opts);
  LinearFit fit = finish_binomial(w, cv.lambda_min);
  return {std::move(cv), std::move(fit)};
}

Eigen::VectorXd predict_linear(const LinearFit& fit, const Eigen::MatrixXd& X) {
  return (X * fit.coefficients).array() + fit.intercept;
}

Eigen::VectorXd predict_prob(const LinearFit& fit, const Eigen::MatrixXd& X) {
  Eigen::VectorXd eta = predict_linear(fit, X);
  for (int i = 0; i < eta.size(); ++i) eta[i] = expit(eta[i]);
  return eta;
}

}  // namespace ateavg::glm
