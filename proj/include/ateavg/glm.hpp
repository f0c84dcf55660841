#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ateavg/errors.hpp"

namespace ateavg::glm {

enum class Family { gaussian, binomial };

// ---------------------------------------------------------------------------
// Fit result shared by every solver in this module.  `selected` is exactly
// the set of nonzero coefficient indices.  `standard_errors` is filled by
// fit_ols only.
// ---------------------------------------------------------------------------
struct LinearFit {
  double intercept = 0.0;
  Eigen::VectorXd coefficients;
  std::vector<int> selected;
  double objective = 0.0;
  Family family = Family::gaussian;
  double lambda = 0.0;
  Eigen::VectorXd standard_errors;
  double intercept_se = 0.0;
  int iterations = 0;
};

inline double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

// Least squares of y on [1, X].  Throws SolverError listing collinear columns
// when the design is rank deficient.  robust_se selects HC1 standard errors.
LinearFit fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                  bool robust_se = false);

// Logistic maximum likelihood by IRLS on [1, X].  Convergence at max
// coefficient change < 1e-8; throws SolverError on separation (any
// coefficient beyond 30 in magnitude) or failure to converge.
LinearFit fit_logistic_mle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

struct LassoOptions {
  double tol = 1e-8;      // max coefficient change per cycle
  int max_cycles = 10000; // across the whole solve
};

// L1-penalized fit by cyclic coordinate descent with an unpenalized
// intercept.  Gaussian objective: (1/2n)*sum((y - a - Xb)^2) + lambda*|b|_1;
// binomial: (1/n)*negative log-likelihood + lambda*|b|_1, solved by IRLS with
// an inner coordinate descent.  X is expected on a standardized scale so the
// penalty is comparable across columns.  KKT conditions hold at the returned
// solution within 1e-6.
LinearFit fit_lasso(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    Family family, double lambda,
                    const LassoOptions& opts = {});

// Smallest penalty at which every slope is zero: max_j |X_j'(y - mean(y))|/n.
double lasso_lambda_max(const Eigen::MatrixXd& X, const Eigen::VectorXd& y);

struct CvResult {
  Eigen::VectorXd lambda_grid;  // decreasing
  Eigen::VectorXd cv_error;     // mean held-out loss per grid value
  double lambda_min = 0.0;
  int folds = 0;
};

// K-fold cross-validation over a 100-point log-spaced grid from lambda_max
// down to 0.001*lambda_max.  Held-out loss is squared error (gaussian) or
// deviance (binomial); folds for binomial responses are stratified.
// Deterministic given seed.  Throws std::invalid_argument when lambda_max is
// zero (the response is orthogonal to every column and the grid is undefined).
CvResult select_lambda_cv(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          Family family, int K, std::uint64_t seed,
                          const LassoOptions& opts = {});

struct CvFit {
  CvResult cv;
  LinearFit fit;  // full-data fit at lambda_min
};

CvFit fit_lasso_cv(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   Family family, int K, std::uint64_t seed,
                   const LassoOptions& opts = {});

// Fit with zero slopes: intercept mean(y) (gaussian) or logit(mean(y))
// (binomial).  Used when lambda_max degenerates to zero.
LinearFit intercept_only_fit(const Eigen::VectorXd& y, Family family, int p);

Eigen::VectorXd predict_linear(const LinearFit& fit, const Eigen::MatrixXd& X);
Eigen::VectorXd predict_prob(const LinearFit& fit, const Eigen::MatrixXd& X);

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace ateavg::glm
