#include <algorithm>
#include <cmath>
#include <vector>

#include "ateavg/errors.hpp"
#include "ateavg/glm.hpp"
#include "ateavg/rng.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace ateavg;
using glm::Family;

namespace {

Eigen::MatrixXd random_matrix(int n, int p, rng::Philox& g) {
  Eigen::MatrixXd X(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) X(i, j) = g.normal();
  return X;
}

// Standardize columns in place (population of tests assumes comparable
// penalty scales, as the lasso contract requires).
void standardize(Eigen::MatrixXd& X) {
  for (int j = 0; j < X.cols(); ++j) {
    const double m = X.col(j).mean();
    const double sd =
        std::sqrt((X.col(j).array() - m).square().sum() / (X.rows() - 1));
    X.col(j) = (X.col(j).array() - m) / sd;
  }
}

double kkt_violation(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                     const glm::LinearFit& fit) {
  const int n = static_cast<int>(X.rows());
  Eigen::VectorXd grad;
  if (fit.family == Family::gaussian) {
    const Eigen::VectorXd r =
        y - glm::predict_linear(fit, X);
    grad = -(X.transpose() * r) / n;
  } else {
    const Eigen::VectorXd p = glm::predict_prob(fit, X);
    grad = X.transpose() * (p - y) / n;
  }
  double viol = 0.0;
  for (int j = 0; j < X.cols(); ++j) {
    if (fit.coefficients[j] != 0.0)
      viol = std::max(viol, std::abs(grad[j] + fit.lambda *
                                                   (fit.coefficients[j] > 0 ? 1.0 : -1.0)));
    else
      viol = std::max(viol, std::max(0.0, std::abs(grad[j]) - fit.lambda));
  }
  return viol;
}

}  // namespace

TEST_CASE("soft_threshold") {
  CHECK(glm::soft_threshold(3.0, 1.0) == 2.0);
  CHECK(glm::soft_threshold(-0.5, 1.0) == 0.0);
  CHECK(glm::soft_threshold(-3.0, 1.0) == -2.0);
  for (double z : {-2.5, -0.1, 0.0, 0.7, 5.0})
    CHECK(glm::soft_threshold(z, 0.0) == z);
}

TEST_CASE("fit_ols recovers exact linear relationships") {
  Eigen::MatrixXd X(6, 1);
  X << -2, -1, 0, 1, 2, 3;
  const Eigen::VectorXd y = 2.0 * X.col(0);
  const glm::LinearFit fit = glm::fit_ols(X, y);
  CHECK(fit.coefficients[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(fit.intercept == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(fit.selected == std::vector<int>{0});
}

TEST_CASE("fit_ols gives zero slope for an orthogonal regressor") {
  Eigen::MatrixXd X(4, 1);
  X << -1, 1, -1, 1;
  Eigen::VectorXd y(4);
  y << 1, 1, -1, -1;  // centered, orthogonal to X
  const glm::LinearFit fit = glm::fit_ols(X, y);
  CHECK(std::abs(fit.coefficients[0]) < 1e-10);
}

TEST_CASE("fit_ols matches the normal equations, with standard errors") {
  rng::Philox g(rng::derive_key(rng::tag("ols-oracle"), 0));
  const Eigen::MatrixXd X = random_matrix(50, 3, g);
  Eigen::VectorXd y(50);
  for (int i = 0; i < 50; ++i)
    y[i] = 1.0 + X(i, 0) - 0.5 * X(i, 2) + 0.3 * g.normal();

  const Eigen::VectorXd ref = oracle::ols_normal_equations(X, y);
  const auto [se_classical, se_hc1] = oracle::ols_standard_errors(X, y);

  const glm::LinearFit plain = glm::fit_ols(X, y, false);
  const glm::LinearFit robust = glm::fit_ols(X, y, true);
  CHECK(plain.intercept == doctest::Approx(ref[0]).epsilon(1e-8));
  for (int j = 0; j < 3; ++j) {
    CHECK(plain.coefficients[j] == doctest::Approx(ref[j + 1]).epsilon(1e-8));
    CHECK(plain.standard_errors[j] ==
          doctest::Approx(se_classical[j + 1]).epsilon(1e-8));
    CHECK(robust.standard_errors[j] ==
          doctest::Approx(se_hc1[j + 1]).epsilon(1e-8));
  }
  CHECK(plain.intercept_se == doctest::Approx(se_classical[0]).epsilon(1e-8));
  CHECK(robust.intercept_se == doctest::Approx(se_hc1[0]).epsilon(1e-8));
}

TEST_CASE("fit_ols reports collinear columns") {
  Eigen::MatrixXd X(10, 3);
  rng::Philox g(rng::derive_key(rng::tag("ols-collinear"), 0));
  for (int i = 0; i < 10; ++i) {
    X(i, 0) = g.normal();
    X(i, 1) = g.normal();
    X(i, 2) = 2.0 * X(i, 0);  // exact collinearity
  }
  const Eigen::VectorXd y = X.col(1);
  CHECK_THROWS_WITH_AS(glm::fit_ols(X, y), doctest::Contains("collinear"),
                       SolverError);
}

TEST_CASE("fit_logistic_mle matches the 2x2-table log odds ratio") {
  // x=0: 10 successes / 10 failures;  x=1: 15 successes / 5 failures.
  const int n = 40;
  Eigen::MatrixXd X(n, 1);
  Eigen::VectorXd y(n);
  int i = 0;
  for (int k = 0; k < 10; ++k, ++i) { X(i, 0) = 0; y[i] = 1; }
  for (int k = 0; k < 10; ++k, ++i) { X(i, 0) = 0; y[i] = 0; }
  for (int k = 0; k < 15; ++k, ++i) { X(i, 0) = 1; y[i] = 1; }
  for (int k = 0; k < 5; ++k, ++i) { X(i, 0) = 1; y[i] = 0; }
  const glm::LinearFit fit = glm::fit_logistic_mle(X, y);
  CHECK(fit.intercept == doctest::Approx(std::log(10.0 / 10.0)).epsilon(1e-6));
  CHECK(fit.coefficients[0] ==
        doctest::Approx(std::log(15.0 / 5.0) - std::log(1.0)).epsilon(1e-6));
}

TEST_CASE("fit_logistic_mle with no covariates returns logit of the mean") {
  Eigen::MatrixXd X(10, 0);
  Eigen::VectorXd y(10);
  for (int i = 0; i < 10; ++i) y[i] = i < 5 ? 1.0 : 0.0;
  const glm::LinearFit fit = glm::fit_logistic_mle(X, y);
  CHECK(fit.intercept == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("fit_logistic_mle shrinks to zero when y is independent of X") {
  rng::Philox g(rng::derive_key(rng::tag("logit-null"), 0));
  const int n = 1000;
  const Eigen::MatrixXd X = random_matrix(n, 3, g);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = g.uniform() < 0.5 ? 1.0 : 0.0;
  const glm::LinearFit fit = glm::fit_logistic_mle(X, y);
  const double ybar = y.mean();
  for (int j = 0; j < 3; ++j) CHECK(std::abs(fit.coefficients[j]) < 0.2);
  CHECK(fit.intercept ==
        doctest::Approx(std::log(ybar / (1 - ybar))).epsilon(0.2));
}

TEST_CASE("logistic gradient vanishes at the MLE") {
  rng::Philox g(rng::derive_key(rng::tag("logit-grad"), 0));
  const int n = 60;
  const Eigen::MatrixXd X = random_matrix(n, 2, g);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i)
    y[i] = g.uniform() < glm::expit(0.4 * X(i, 0) - 0.6 * X(i, 1)) ? 1.0 : 0.0;
  const glm::LinearFit fit = glm::fit_logistic_mle(X, y);

  // analytic mean-scaled gradient at the fit
  Eigen::MatrixXd D(n, 3);
  D.col(0).setOnes();
  D.rightCols(2) = X;
  Eigen::VectorXd coef(3);
  coef << fit.intercept, fit.coefficients[0], fit.coefficients[1];
  const Eigen::VectorXd eta = D * coef;
  Eigen::VectorXd prob(n);
  for (int i = 0; i < n; ++i) prob[i] = glm::expit(eta[i]);
  const Eigen::VectorXd grad = D.transpose() * (prob - y) / n;
  CHECK(grad.lpNorm<Eigen::Infinity>() <= 1e-6);

  // finite differences of the mean negative log-likelihood agree with it
  const auto nll = [&](const Eigen::VectorXd& c) {
    const Eigen::VectorXd e = D * c;
    double v = 0.0;
    for (int i = 0; i < n; ++i)
      v += std::max(e[i], 0.0) + std::log1p(std::exp(-std::abs(e[i]))) -
           y[i] * e[i];
    return v / n;
  };
  const double h = 1e-6;
  for (int k = 0; k < 3; ++k) {
    Eigen::VectorXd up = coef, dn = coef;
    up[k] += h;
    dn[k] -= h;
    const double fd = (nll(up) - nll(dn)) / (2 * h);
    CHECK(fd == doctest::Approx(grad[k]).epsilon(1e-4).scale(1.0));
  }
}

TEST_CASE("lasso at or above lambda_max keeps every slope at zero") {
  rng::Philox g(rng::derive_key(rng::tag("lasso-lmax"), 0));
  Eigen::MatrixXd X = random_matrix(40, 6, g);
  standardize(X);
  Eigen::VectorXd y(40);
  for (int i = 0; i < 40; ++i) y[i] = X(i, 0) + 0.5 * g.normal();
  const double lmax = glm::lasso_lambda_max(X, y);

  for (double mult : {1.0, 1.5}) {
    const glm::LinearFit fit = glm::fit_lasso(X, y, Family::gaussian, mult * lmax);
    CHECK(fit.coefficients.lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(fit.intercept == doctest::Approx(y.mean()).epsilon(1e-10));
    CHECK(fit.selected.empty());
  }

  SUBCASE("same subgradient bound holds for the binomial family") {
    Eigen::VectorXd yb(40);
    for (int i = 0; i < 40; ++i) yb[i] = g.uniform() < 0.5 ? 1.0 : 0.0;
    const double lb = glm::lasso_lambda_max(X, yb);
    const glm::LinearFit fit = glm::fit_lasso(X, yb, Family::binomial, 1.01 * lb);
    CHECK(fit.coefficients.lpNorm<Eigen::Infinity>() == 0.0);
    const double ybar = yb.mean();
    CHECK(fit.intercept ==
          doctest::Approx(std::log(ybar / (1 - ybar))).epsilon(1e-6));
  }
}

TEST_CASE("lasso with zero penalty equals OLS") {
  rng::Philox g(rng::derive_key(rng::tag("lasso-zero"), 0));
  Eigen::MatrixXd X = random_matrix(60, 5, g);
  standardize(X);
  Eigen::VectorXd y(60);
  for (int i = 0; i < 60; ++i)
    y[i] = 0.5 + X(i, 1) - 0.7 * X(i, 3) + 0.4 * g.normal();
  const glm::LinearFit lasso = glm::fit_lasso(X, y, Family::gaussian, 0.0);
  const glm::LinearFit ols = glm::fit_ols(X, y);
  CHECK(lasso.intercept == doctest::Approx(ols.intercept).epsilon(1e-8));
  for (int j = 0; j < 5; ++j)
    CHECK(lasso.coefficients[j] ==
          doctest::Approx(ols.coefficients[j]).epsilon(1e-8));
}

TEST_CASE("lasso agrees with a proximal-gradient reference") {
  rng::Philox g(rng::derive_key(rng::tag("lasso-prox"), 0));
  Eigen::MatrixXd X = random_matrix(20, 5, g);
  standardize(X);
  Eigen::VectorXd y(20);
  for (int i = 0; i < 20; ++i) y[i] = X(i, 0) - X(i, 2) + 0.3 * g.normal();
  const double lambda = 0.3 * glm::lasso_lambda_max(X, y);
  const glm::LinearFit fit = glm::fit_lasso(X, y, Family::gaussian, lambda);
  const auto [a_ref, b_ref] = oracle::lasso_proximal(X, y, lambda);
  const double obj_ref = oracle::lasso_objective(X, y, a_ref, b_ref, lambda);
  CHECK(fit.objective == doctest::Approx(obj_ref).epsilon(1e-8));
  CHECK(fit.intercept == doctest::Approx(a_ref).epsilon(1e-6));
  for (int j = 0; j < 5; ++j)
    CHECK(fit.coefficients[j] == doctest::Approx(b_ref[j]).epsilon(1e-4).scale(1.0));
}

TEST_CASE("lasso satisfies the KKT conditions on random instances") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    rng::Philox g(rng::derive_key(rng::tag("lasso-kkt"), s));
    const int n = 30 + static_cast<int>(g.uniform_int(40));
    const int p = 5 + static_cast<int>(g.uniform_int(20));
    Eigen::MatrixXd X = random_matrix(n, p, g);
    standardize(X);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i)
      y[i] = X(i, 0) - 0.5 * X(i, p - 1) + g.normal();
    const double lambda = (0.05 + 0.5 * g.uniform()) * glm::lasso_lambda_max(X, y);

    const glm::LinearFit gfit = glm::fit_lasso(X, y, Family::gaussian, lambda);
    CHECK(kkt_violation(X, y, gfit) <= 1e-6);

    Eigen::VectorXd yb(n);
    for (int i = 0; i < n; ++i)
      yb[i] = g.uniform() < glm::expit(X(i, 0)) ? 1.0 : 0.0;
    const double lb = 0.3 * glm::lasso_lambda_max(X, yb);
    if (lb > 0) {
      const glm::LinearFit bfit = glm::fit_lasso(X, yb, Family::binomial, lb);
      CHECK(kkt_violation(X, yb, bfit) <= 1e-6);
    }
  }
}

TEST_CASE("lasso handles p much larger than n") {
  rng::Philox g(rng::derive_key(rng::tag("lasso-wide"), 0));
  Eigen::MatrixXd X = random_matrix(50, 200, g);
  standardize(X);
  Eigen::VectorXd y(50);
  for (int i = 0; i < 50; ++i) y[i] = 2.0 * X(i, 0) + 0.5 * g.normal();
  const double lambda = 0.2 * glm::lasso_lambda_max(X, y);
  const glm::LinearFit fit = glm::fit_lasso(X, y, Family::gaussian, lambda);
  CHECK(kkt_violation(X, y, fit) <= 1e-6);
  CHECK(fit.coefficients[0] > 1.0);  // the true signal survives
}

TEST_CASE("select_lambda_cv is deterministic and well-formed") {
  rng::Philox g(rng::derive_key(rng::tag("cv-shape"), 0));
  Eigen::MatrixXd X = random_matrix(80, 10, g);
  standardize(X);
  Eigen::VectorXd y(80);
  for (int i = 0; i < 80; ++i) y[i] = X(i, 2) + 0.5 * g.normal();

  const glm::CvResult a = glm::select_lambda_cv(X, y, Family::gaussian, 10, 5);
  const glm::CvResult b = glm::select_lambda_cv(X, y, Family::gaussian, 10, 5);
  CHECK(a.lambda_min == b.lambda_min);
  CHECK((a.cv_error - b.cv_error).norm() == 0.0);

  REQUIRE(a.lambda_grid.size() == 100);
  CHECK(a.lambda_grid[0] == doctest::Approx(glm::lasso_lambda_max(X, y)));
  CHECK(a.lambda_grid[99] ==
        doctest::Approx(0.001 * glm::lasso_lambda_max(X, y)).epsilon(1e-9));
  for (int l = 1; l < 100; ++l) REQUIRE(a.lambda_grid[l] < a.lambda_grid[l - 1]);
  CHECK(a.cv_error.allFinite());
  bool on_grid = false;
  for (int l = 0; l < 100; ++l) on_grid = on_grid || a.lambda_grid[l] == a.lambda_min;
  CHECK(on_grid);
  CHECK(a.folds == 10);
}

TEST_CASE("select_lambda_cv rejects a flat response") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(30, 4);
  const Eigen::VectorXd y = Eigen::VectorXd::Constant(30, 2.5);
  CHECK_THROWS_AS(glm::select_lambda_cv(X, y, Family::gaussian, 10, 1),
                  std::invalid_argument);
}

TEST_CASE("cross-validated lasso keeps noise out and signal in") {
  const int n = 200, p = 50;
  int noise_small = 0;
  int signal_hit = 0;
  std::vector<double> sizes;
  for (std::uint64_t s = 0; s < 50; ++s) {
    rng::Philox g(rng::derive_key(rng::tag("cv-mc"), s));
    Eigen::MatrixXd X = random_matrix(n, p, g);
    standardize(X);

    Eigen::VectorXd noise(n);
    for (int i = 0; i < n; ++i) noise[i] = g.normal();
    const glm::CvFit nf = glm::fit_lasso_cv(X, noise, Family::gaussian, 10, s);
    sizes.push_back(static_cast<double>(nf.fit.selected.size()));
    if (nf.fit.selected.size() <= 3) ++noise_small;

    Eigen::VectorXd sig(n);
    for (int i = 0; i < n; ++i) sig[i] = 2.0 * X(i, 7) + 0.5 * g.normal();
    const glm::CvFit sf = glm::fit_lasso_cv(X, sig, Family::gaussian, 10, s);
    bool hit = false;
    for (int j : sf.fit.selected) hit = hit || j == 7;
    if (hit) ++signal_hit;
  }
  std::sort(sizes.begin(), sizes.end());
  CHECK(sizes[25] <= 3.0);      // median selected-set size under pure noise
  CHECK(signal_hit >= 48);      // >= 95% of 50 seeds
}

TEST_CASE("intercept_only_fit") {
  Eigen::VectorXd y(4);
  y << 1, 0, 1, 0;
  const glm::LinearFit gz = glm::intercept_only_fit(y, Family::gaussian, 3);
  CHECK(gz.intercept == doctest::Approx(0.5));
  CHECK(gz.coefficients.size() == 3);
  CHECK(gz.selected.empty());
  const glm::LinearFit bz = glm::intercept_only_fit(y, Family::binomial, 2);
  CHECK(bz.intercept == doctest::Approx(0.0));
}
