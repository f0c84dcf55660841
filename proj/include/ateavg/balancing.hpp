#pragma once

#include <Eigen/Dense>

#include "ateavg/errors.hpp"

namespace ateavg::balancing {

// ---------------------------------------------------------------------------
// Weights for one treatment arm that trade off dispersion against covariate
// imbalance:  f(w) = zeta*||w||_2^2 + (1-zeta)*||target - X_arm' w||_inf^2,
// minimized over the probability simplex.
// ---------------------------------------------------------------------------
struct BalanceProblem {
  Eigen::MatrixXd X_arm;   // n_t x p, covariates of the arm being reweighted
  Eigen::VectorXd target;  // length p, usually the full-sample column means
  double zeta = 0.5;       // in (0, 1)
  int max_iter = 20000;
  double tol = 1e-7;       // objective-improvement stopping threshold
};

// Euclidean projection onto {w : w_i >= 0, sum w_i = 1} via the sort-based
// algorithm.  Output is nonnegative and sums to 1 within 1e-10.
Eigen::VectorXd project_to_simplex(const Eigen::VectorXd& v);

// Projected gradient with backtracking, started from uniform weights and
// accepting only strict decreases, so f(result) <= f(uniform) always.  The
// infinity-norm term is linearized at a maximizing coordinate (ties broken by
// lowest index).  Stops when the improvement stays below prob.tol for 10
// consecutive iterations or after prob.max_iter iterations.
Eigen::VectorXd solve_balancing_weights(const BalanceProblem& prob);

// The objective being minimized; exposed for tests and diagnostics.
double balance_objective(const BalanceProblem& prob, const Eigen::VectorXd& w);

}  // namespace ateavg::balancing
