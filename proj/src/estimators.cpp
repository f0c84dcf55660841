#include "ateavg/estimators.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "ateavg/balancing.hpp"
#include "ateavg/errors.hpp"
#include "ateavg/glm.hpp"
#include "ateavg/rng.hpp"

namespace ateavg::estimators {

namespace {

using glm::Family;

Eigen::MatrixXd cols_of(const Eigen::MatrixXd& x, const std::vector<int>& idx) {
  Eigen::MatrixXd r(x.rows(), static_cast<int>(idx.size()));
  for (int j = 0; j < r.cols(); ++j) r.col(j) = x.col(idx[j]);
  return r;
}

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x, const std::vector<int>& idx) {
  Eigen::MatrixXd r(static_cast<int>(idx.size()), x.cols());
  for (int i = 0; i < r.rows(); ++i) r.row(i) = x.row(idx[i]);
  return r;
}

Eigen::VectorXd elems_of(const Eigen::VectorXd& v, const std::vector<int>& idx) {
  Eigen::VectorXd r(static_cast<int>(idx.size()));
  for (int i = 0; i < r.size(); ++i) r[i] = v[idx[i]];
  return r;
}

std::vector<int> arm_rows(const Eigen::VectorXd& t, double arm) {
  std::vector<int> idx;
  for (int i = 0; i < t.size(); ++i)
    if (t[i] == arm) idx.push_back(i);
  return idx;
}

double sample_sd(const Eigen::VectorXd& v) {
  const int n = static_cast<int>(v.size());
  if (n < 2) return 0.0;
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / (n - 1));
}

// Clamp propensities into [delta, 1-delta], counting how many moved.
Eigen::VectorXd clip_propensity(Eigen::VectorXd e, double delta, int* clipped) {
  int moved = 0;
  for (int i = 0; i < e.size(); ++i) {
    const double c = std::clamp(e[i], delta, 1.0 - delta);
    if (c != e[i]) ++moved;
    e[i] = c;
  }
  if (clipped) *clipped = moved;
  return e;
}

// Cross-validated lasso with a guard for degenerate responses: when every
// column is orthogonal to y (lambda_max = 0, e.g. a constant within-arm
// outcome) the grid is undefined and the correct fit has zero slopes.
glm::LinearFit cv_lasso(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                        Family family, int folds, std::uint64_t seed) {
  if (glm::lasso_lambda_max(x, y) <= 0.0)
    return glm::intercept_only_fit(y, family, static_cast<int>(x.cols()));
  const int k = std::min<int>(folds, static_cast<int>(y.size()));
  return glm::fit_lasso_cv(x, y, family, k, seed).fit;
}

// Unpenalized least-squares refit on the selected set, evaluated at xeval;
// falls back to the penalized predictions when the refit is rank deficient.
Eigen::VectorXd refit_predict_mean(const glm::LinearFit& lasso,
                                   const Eigen::MatrixXd& xtrain,
                                   const Eigen::VectorXd& ytrain,
                                   const Eigen::MatrixXd& xeval,
                                   double* fallbacks) {
  try {
    const glm::LinearFit ols = glm::fit_ols(cols_of(xtrain, lasso.selected), ytrain);
    return glm::predict_linear(ols, cols_of(xeval, lasso.selected));
  } catch (const SolverError&) {
    if (fallbacks) *fallbacks += 1.0;
    return glm::predict_linear(lasso, xeval);
  }
}

// Unpenalized logistic refit on the selected set; falls back to penalized
// predictions on separation or rank deficiency.
Eigen::VectorXd refit_predict_prob(const glm::LinearFit& lasso,
                                   const Eigen::MatrixXd& xtrain,
                                   const Eigen::VectorXd& ttrain,
                                   const Eigen::MatrixXd& xeval,
                                   double* fallbacks) {
  try {
    const glm::LinearFit mle =
        glm::fit_logistic_mle(cols_of(xtrain, lasso.selected), ttrain);
    return glm::predict_prob(mle, cols_of(xeval, lasso.selected));
  } catch (const SolverError&) {
    if (fallbacks) *fallbacks += 1.0;
    return glm::predict_prob(lasso, xeval);
  }
}

void add_iterations(EstimatorOutput& out, const glm::LinearFit& fit) {
  out.diagnostics["iterations"] += fit.iterations;
}

std::uint64_t method_key(std::uint64_t purpose, MethodId m,
                         const EstimatorSettings& s) {
  return rng::derive_key(purpose, static_cast<std::uint64_t>(m), s.seed);
}

// --- DoublePS ---------------------------------------------------------------
// Lasso selection for the outcome and the treatment, then least squares of Y
// on the treatment indicator plus the union of both selected sets; the
// treatment coefficient with its HC1 standard error is the estimate.
void run_double_ps(const Dataset& ds, const EstimatorSettings& s,
                   EstimatorOutput& out) {
  const MethodId m = MethodId::DoublePS;
  const int n = ds.n();
  const glm::LinearFit fy =
      cv_lasso(ds.covariates, ds.outcome, Family::gaussian, s.cv_folds,
               method_key(rng::tag("selection-outcome-cv"), m, s));
  const glm::LinearFit ft =
      cv_lasso(ds.covariates, ds.treatment, Family::binomial, s.cv_folds,
               method_key(rng::tag("selection-treatment-cv"), m, s));
  add_iterations(out, fy);
  add_iterations(out, ft);

  std::vector<int> joint = fy.selected;
  joint.insert(joint.end(), ft.selected.begin(), ft.selected.end());
  std::sort(joint.begin(), joint.end());
  joint.erase(std::unique(joint.begin(), joint.end()), joint.end());
  out.diagnostics["selected_outcome"] = static_cast<double>(fy.selected.size());
  out.diagnostics["selected_treatment"] = static_cast<double>(ft.selected.size());
  out.diagnostics["selected_union"] = static_cast<double>(joint.size());

  // Guard against selections so large the final regression degenerates:
  // keep the columns with the largest coefficient magnitude in either fit.
  const int cap = std::max(n - 10, 0);
  if (static_cast<int>(joint.size()) > cap) {
    std::sort(joint.begin(), joint.end(), [&](int a, int b) {
      const double sa = std::max(std::abs(fy.coefficients[a]),
                                 std::abs(ft.coefficients[a]));
      const double sb = std::max(std::abs(fy.coefficients[b]),
                                 std::abs(ft.coefficients[b]));
      return sa != sb ? sa > sb : a < b;
    });
    joint.resize(cap);
    std::sort(joint.begin(), joint.end());
    out.diagnostics["union_truncated"] = 1.0;
  }

  Eigen::MatrixXd design(n, 1 + static_cast<int>(joint.size()));
  design.col(0) = ds.treatment;
  design.rightCols(static_cast<int>(joint.size())) = cols_of(ds.covariates, joint);
  const glm::LinearFit ols = glm::fit_ols(design, ds.outcome, /*robust_se=*/true);
  out.theta_hat = ols.coefficients[0];
  out.sigma_hat = ols.standard_errors[0];
}

// --- Debiasing --------------------------------------------------------------
// Per arm: a lasso outcome model plus simplex-constrained balancing weights
// against the full-sample covariate mean; the arm mean is the model
// prediction at the mean plus the weighted residual correction.
void run_debiasing(const Dataset& ds, const EstimatorSettings& s,
                   EstimatorOutput& out) {
  const MethodId m = MethodId::Debiasing;
  const Eigen::VectorXd target = ds.covariates.colwise().mean();
  double mu[2], var[2];
  for (const int arm : {1, 0}) {
    const std::vector<int> idx = arm_rows(ds.treatment, arm);
    const Eigen::MatrixXd xa = rows_of(ds.covariates, idx);
    const Eigen::VectorXd ya = elems_of(ds.outcome, idx);
    const glm::LinearFit fit = cv_lasso(
        xa, ya, Family::gaussian, s.cv_folds,
        rng::derive_key(method_key(rng::tag("residual-balance-cv"), m, s),
                        static_cast<std::uint64_t>(arm)));
    add_iterations(out, fit);
    const Eigen::VectorXd resid = ya - glm::predict_linear(fit, xa);

    balancing::BalanceProblem prob;
    prob.X_arm = xa;
    prob.target = target;
    prob.zeta = s.zeta;
    const Eigen::VectorXd gamma = balancing::solve_balancing_weights(prob);

    mu[arm] = fit.intercept + target.dot(fit.coefficients) + gamma.dot(resid);
    var[arm] = (gamma.array().square() * resid.array().square()).sum();
    const std::string suffix = arm == 1 ? "_treated" : "_control";
    out.diagnostics["selected_outcome" + suffix] =
        static_cast<double>(fit.selected.size());
    out.diagnostics["balance_objective" + suffix] =
        balancing::balance_objective(prob, gamma);
  }
  out.theta_hat = mu[1] - mu[0];
  out.sigma_hat = std::sqrt(var[1] + var[0]);
}

// --- DRLasso ----------------------------------------------------------------
// Doubly robust scoring with lasso-selected, unpenalized-refit nuisances fit
// on the full sample.
void run_dr_lasso(const Dataset& ds, const EstimatorSettings& s,
                  EstimatorOutput& out) {
  const MethodId m = MethodId::DRLasso;
  double fallbacks = 0.0;
  const glm::LinearFit pfit =
      cv_lasso(ds.covariates, ds.treatment, Family::binomial, s.cv_folds,
               method_key(rng::tag("dr-propensity-cv"), m, s));
  add_iterations(out, pfit);
  Eigen::VectorXd e = refit_predict_prob(pfit, ds.covariates, ds.treatment,
                                         ds.covariates, &fallbacks);
  out.diagnostics["selected_propensity"] =
      static_cast<double>(pfit.selected.size());

  Eigen::VectorXd mu[2];
  for (const int arm : {1, 0}) {
    const std::vector<int> idx = arm_rows(ds.treatment, arm);
    const Eigen::MatrixXd xa = rows_of(ds.covariates, idx);
    const Eigen::VectorXd ya = elems_of(ds.outcome, idx);
    const glm::LinearFit ofit =
        cv_lasso(xa, ya, Family::gaussian, s.cv_folds,
                 method_key(rng::tag("dr-outcome-cv"), m, s));
    add_iterations(out, ofit);
    mu[arm] = refit_predict_mean(ofit, xa, ya, ds.covariates, &fallbacks);
    out.diagnostics[arm == 1 ? "selected_outcome_treated"
                             : "selected_outcome_control"] =
        static_cast<double>(ofit.selected.size());
  }

  int clipped = 0;
  e = clip_propensity(std::move(e), s.propensity_clip, &clipped);
  out.diagnostics["clipped"] = clipped;
  out.diagnostics["refit_fallbacks"] = fallbacks;
  const ScoreSummary sc =
      aipw_point_and_var(ds.outcome, ds.treatment, mu[1], mu[0], e);
  out.theta_hat = sc.theta;
  out.sigma_hat = sc.sigma;
}

// --- DRME -------------------------------------------------------------------
// Matching on the logit-scale propensity and a control-arm prognostic score,
// with regression bias correction on the two scores and a matched-pairs
// variance using the match counts.
struct CorrectionFit {
  Eigen::VectorXd pred;  // fitted mean for every unit
  double resid_var = 0.0;
};

CorrectionFit correct_on_scores(const Eigen::MatrixXd& strain,
                                const Eigen::VectorXd& ytrain,
                                const Eigen::MatrixXd& seval) {
  // Drop near-constant score columns (a propensity lasso that selects
  // nothing yields a constant logit score) so the regression stays
  // well-posed; fall back to the arm mean if both columns degenerate.
  std::vector<int> usable;
  for (int j = 0; j < strain.cols(); ++j)
    if (sample_sd(strain.col(j)) > 1e-12) usable.push_back(j);
  const int nt = static_cast<int>(ytrain.size());
  try {
    const glm::LinearFit fit = glm::fit_ols(cols_of(strain, usable), ytrain);
    const Eigen::VectorXd fitted = glm::predict_linear(fit, cols_of(strain, usable));
    const int dof = std::max(nt - 1 - static_cast<int>(usable.size()), 1);
    return {glm::predict_linear(fit, cols_of(seval, usable)),
            (ytrain - fitted).squaredNorm() / dof};
  } catch (const SolverError&) {
    const double mean = ytrain.mean();
    const double var =
        nt > 1 ? (ytrain.array() - mean).square().sum() / (nt - 1) : 0.0;
    return {Eigen::VectorXd::Constant(seval.rows(), mean), var};
  }
}

void run_drme(const Dataset& ds, const EstimatorSettings& s,
              EstimatorOutput& out) {
  const MethodId m = MethodId::DRME;
  const int n = ds.n();
  const glm::LinearFit pfit =
      cv_lasso(ds.covariates, ds.treatment, Family::binomial, s.cv_folds,
               method_key(rng::tag("match-propensity-cv"), m, s));
  const std::vector<int> ctrl = arm_rows(ds.treatment, 0);
  const glm::LinearFit gfit =
      cv_lasso(rows_of(ds.covariates, ctrl), elems_of(ds.outcome, ctrl),
               Family::gaussian, s.cv_folds,
               method_key(rng::tag("match-prognostic-cv"), m, s));
  add_iterations(out, pfit);
  add_iterations(out, gfit);
  out.diagnostics["selected_propensity"] =
      static_cast<double>(pfit.selected.size());
  out.diagnostics["selected_prognostic"] =
      static_cast<double>(gfit.selected.size());

  Eigen::MatrixXd scores(n, 2);
  scores.col(0) = glm::predict_linear(pfit, ds.covariates);  // logit scale
  scores.col(1) = glm::predict_linear(gfit, ds.covariates);
  const MatchTable mt = nearest_neighbor_match(scores, ds.treatment, s.match_count);

  const std::vector<int> treat = arm_rows(ds.treatment, 1);
  const CorrectionFit fit1 =
      correct_on_scores(rows_of(scores, treat), elems_of(ds.outcome, treat), scores);
  const CorrectionFit fit0 =
      correct_on_scores(rows_of(scores, ctrl), elems_of(ds.outcome, ctrl), scores);

  // Impute the missing arm for every unit from its matches, shifting each
  // matched outcome by the fitted mean difference between the two score
  // locations.
  Eigen::VectorXd contrast(n);
  for (int i = 0; i < n; ++i) {
    const CorrectionFit& fit = ds.treatment[i] == 1.0 ? fit0 : fit1;
    double imputed = 0.0;
    for (const int j : mt.matches[i])
      imputed += ds.outcome[j] + fit.pred[i] - fit.pred[j];
    imputed /= static_cast<double>(mt.matches[i].size());
    contrast[i] = ds.treatment[i] == 1.0 ? ds.outcome[i] - imputed
                                         : imputed - ds.outcome[i];
  }
  const double theta = contrast.mean();

  // Matched-pairs variance: dispersion of the fitted effect surface plus
  // arm-level residual variance inflated by how often each unit is reused.
  double surface = 0.0, reuse = 0.0;
  const double k = static_cast<double>(s.match_count);
  for (int i = 0; i < n; ++i) {
    const double gap = fit1.pred[i] - fit0.pred[i] - theta;
    surface += gap * gap;
    const double load = 1.0 + mt.use_counts[i] / k;
    reuse += load * load *
             (ds.treatment[i] == 1.0 ? fit1.resid_var : fit0.resid_var);
  }
  out.theta_hat = theta;
  out.sigma_hat = std::sqrt(surface + reuse) / n;
  out.diagnostics["max_match_reuse"] = static_cast<double>(
      *std::max_element(mt.use_counts.begin(), mt.use_counts.end()));
}

// --- TMLE -------------------------------------------------------------------
// Lasso outcome model on (T, X) evaluated at both arms, lasso propensity,
// then the one-step targeted update.
void run_tmle(const Dataset& ds, const EstimatorSettings& s,
              EstimatorOutput& out) {
  const MethodId m = MethodId::TMLE;
  const int n = ds.n();
  const int p = ds.p();
  Eigen::MatrixXd design(n, p + 1);
  design.col(0) = ds.treatment;
  design.rightCols(p) = ds.covariates;
  const glm::LinearFit ofit =
      cv_lasso(design, ds.outcome, Family::gaussian, s.cv_folds,
               method_key(rng::tag("target-outcome-cv"), m, s));
  add_iterations(out, ofit);

  Eigen::MatrixXd at_arm = design;
  at_arm.col(0).setOnes();
  const Eigen::VectorXd mu1 = glm::predict_linear(ofit, at_arm);
  at_arm.col(0).setZero();
  const Eigen::VectorXd mu0 = glm::predict_linear(ofit, at_arm);

  const glm::LinearFit pfit =
      cv_lasso(ds.covariates, ds.treatment, Family::binomial, s.cv_folds,
               method_key(rng::tag("target-propensity-cv"), m, s));
  add_iterations(out, pfit);
  int clipped = 0;
  const Eigen::VectorXd e = clip_propensity(
      glm::predict_prob(pfit, ds.covariates), s.propensity_clip, &clipped);

  const TargetingResult tr = tmle_target(ds.outcome, ds.treatment, mu1, mu0, e);
  out.theta_hat = tr.theta;
  out.sigma_hat = tr.sigma;
  out.diagnostics["epsilon"] = tr.epsilon;
  out.diagnostics["clipped"] = clipped;
  int covariate_hits = 0;
  for (const int j : ofit.selected)
    if (j > 0) ++covariate_hits;
  out.diagnostics["selected_outcome"] = covariate_hits;
  out.diagnostics["selected_propensity"] =
      static_cast<double>(pfit.selected.size());
}

// --- TMLEScreen -------------------------------------------------------------
// Marginal-correlation screening, unpenalized outcome and propensity models
// on the screened set, then the same targeted update.
void run_tmle_screen(const Dataset& ds, const EstimatorSettings& s,
                     EstimatorOutput& out) {
  const int n = ds.n();
  const int p = ds.p();
  int cap = s.screen_cap > 0 ? s.screen_cap : n / 10;
  cap = std::min(cap, p);
  if (cap < 1)
    throw EstimatorError(MethodId::TMLEScreen,
                         "sample too small for the screening step");

  // Columns are standardized, so |X_j'(Y - mean(Y))| ranks marginal
  // correlation with the outcome.
  const Eigen::VectorXd centered = ds.outcome.array() - ds.outcome.mean();
  const Eigen::VectorXd assoc = (ds.covariates.transpose() * centered).cwiseAbs();
  std::vector<int> order(p);
  for (int j = 0; j < p; ++j) order[j] = j;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return assoc[a] != assoc[b] ? assoc[a] > assoc[b] : a < b;
  });
  std::vector<int> kept(order.begin(), order.begin() + cap);
  std::sort(kept.begin(), kept.end());
  out.diagnostics["screened"] = static_cast<double>(kept.size());

  Eigen::MatrixXd design(n, 1 + cap);
  design.col(0) = ds.treatment;
  design.rightCols(cap) = cols_of(ds.covariates, kept);
  const glm::LinearFit ofit = glm::fit_ols(design, ds.outcome);
  Eigen::MatrixXd at_arm = design;
  at_arm.col(0).setOnes();
  const Eigen::VectorXd mu1 = glm::predict_linear(ofit, at_arm);
  at_arm.col(0).setZero();
  const Eigen::VectorXd mu0 = glm::predict_linear(ofit, at_arm);

  const glm::LinearFit pfit =
      glm::fit_logistic_mle(cols_of(ds.covariates, kept), ds.treatment);
  add_iterations(out, pfit);
  int clipped = 0;
  const Eigen::VectorXd e = clip_propensity(
      glm::predict_prob(pfit, cols_of(ds.covariates, kept)), s.propensity_clip,
      &clipped);

  const TargetingResult tr = tmle_target(ds.outcome, ds.treatment, mu1, mu0, e);
  out.theta_hat = tr.theta;
  out.sigma_hat = tr.sigma;
  out.diagnostics["epsilon"] = tr.epsilon;
  out.diagnostics["clipped"] = clipped;
}

// --- DML / DMLPS ------------------------------------------------------------
// K-fold cross-fitting: nuisances trained on each fold's complement with
// fold-local cross-validation, scored on the held-out fold, then a single
// pooled doubly robust summary.  The post-selection variant refits the
// selected sets without penalty before predicting.
void run_dml(const Dataset& ds, const EstimatorSettings& s, MethodId m,
             bool refits, EstimatorOutput& out) {
  const int n = ds.n();
  const FoldAssignment fa = assign_folds(
      ds, s.dml_folds, method_key(rng::tag("cross-fit-folds"), m, s));
  double fallbacks = 0.0;
  Eigen::VectorXd e(n), mu1(n), mu0(n);
  for (int f = 1; f <= fa.K; ++f) {
    std::vector<int> test, train;
    for (int i = 0; i < n; ++i)
      (fa.fold_of[i] == f ? test : train).push_back(i);
    const Eigen::MatrixXd xtr = rows_of(ds.covariates, train);
    const Eigen::VectorXd ttr = elems_of(ds.treatment, train);
    const Eigen::VectorXd ytr = elems_of(ds.outcome, train);
    const Eigen::MatrixXd xte = rows_of(ds.covariates, test);

    const glm::LinearFit pfit = cv_lasso(
        xtr, ttr, Family::binomial, s.cv_folds,
        rng::derive_key(method_key(rng::tag("cross-fit-propensity-cv"), m, s),
                        static_cast<std::uint64_t>(f)));
    add_iterations(out, pfit);
    const Eigen::VectorXd ete =
        refits ? refit_predict_prob(pfit, xtr, ttr, xte, &fallbacks)
               : glm::predict_prob(pfit, xte);

    const std::uint64_t outcome_seed =
        rng::derive_key(method_key(rng::tag("cross-fit-outcome-cv"), m, s),
                        static_cast<std::uint64_t>(f));
    Eigen::VectorXd mute[2];
    for (const int arm : {1, 0}) {
      const std::vector<int> rows = arm_rows(ttr, arm);
      if (rows.size() < 2)
        throw EstimatorError(m, "a training split lost an entire arm");
      const Eigen::MatrixXd xa = rows_of(xtr, rows);
      const Eigen::VectorXd ya = elems_of(ytr, rows);
      const glm::LinearFit ofit =
          cv_lasso(xa, ya, Family::gaussian, s.cv_folds, outcome_seed);
      add_iterations(out, ofit);
      mute[arm] = refits ? refit_predict_mean(ofit, xa, ya, xte, &fallbacks)
                         : glm::predict_linear(ofit, xte);
    }
    for (std::size_t idx = 0; idx < test.size(); ++idx) {
      e[test[idx]] = ete[static_cast<int>(idx)];
      mu1[test[idx]] = mute[1][static_cast<int>(idx)];
      mu0[test[idx]] = mute[0][static_cast<int>(idx)];
    }
  }
  int clipped = 0;
  e = clip_propensity(std::move(e), s.propensity_clip, &clipped);
  out.diagnostics["clipped"] = clipped;
  if (refits) out.diagnostics["refit_fallbacks"] = fallbacks;
  const ScoreSummary sc =
      aipw_point_and_var(ds.outcome, ds.treatment, mu1, mu0, e);
  out.theta_hat = sc.theta;
  out.sigma_hat = sc.sigma;
}

void check_settings(const EstimatorSettings& s) {
  if (s.cv_folds < 2)
    throw ValidationError("cv_folds must be at least 2");
  if (s.dml_folds < 2)
    throw ValidationError("dml_folds must be at least 2");
  if (!(s.propensity_clip > 0.0 && s.propensity_clip < 0.5))
    throw ValidationError("propensity_clip must lie strictly between 0 and 0.5");
  if (!(s.zeta > 0.0 && s.zeta < 1.0))
    throw ValidationError("zeta must lie strictly between 0 and 1");
  if (s.match_count < 1)
    throw ValidationError("match_count must be at least 1");
  if (s.screen_cap < 0)
    throw ValidationError("screen_cap must be nonnegative");
}

}  // namespace

ScoreSummary aipw_point_and_var(const Eigen::VectorXd& y,
                                const Eigen::VectorXd& t,
                                const Eigen::VectorXd& mu1,
                                const Eigen::VectorXd& mu0,
                                const Eigen::VectorXd& e) {
  const int n = static_cast<int>(y.size());
  if (t.size() != n || mu1.size() != n || mu0.size() != n || e.size() != n)
    throw ValidationError("doubly robust inputs must share one length");
  if (n < 1) throw ValidationError("doubly robust score needs data");
  Eigen::VectorXd psi(n);
  for (int i = 0; i < n; ++i) {
    if (!(e[i] > 0.0 && e[i] < 1.0))
      throw ValidationError("propensities must lie strictly inside (0, 1)");
    if (t[i] != 0.0 && t[i] != 1.0)
      throw ValidationError("treatment entries must be exactly 0 or 1");
    psi[i] = mu1[i] - mu0[i] + t[i] * (y[i] - mu1[i]) / e[i] -
             (1.0 - t[i]) * (y[i] - mu0[i]) / (1.0 - e[i]);
  }
  return {psi.mean(), sample_sd(psi) / std::sqrt(static_cast<double>(n))};
}

TargetingResult tmle_target(const Eigen::VectorXd& y, const Eigen::VectorXd& t,
                            const Eigen::VectorXd& mu1,
                            const Eigen::VectorXd& mu0,
                            const Eigen::VectorXd& e) {
  const int n = static_cast<int>(y.size());
  if (t.size() != n || mu1.size() != n || mu0.size() != n || e.size() != n)
    throw ValidationError("targeting inputs must share one length");
  if (n < 1) throw ValidationError("targeting needs data");
  Eigen::VectorXd h(n), observed(n);
  for (int i = 0; i < n; ++i) {
    if (!(e[i] > 0.0 && e[i] < 1.0))
      throw ValidationError("propensities must lie strictly inside (0, 1)");
    if (t[i] != 0.0 && t[i] != 1.0)
      throw ValidationError("treatment entries must be exactly 0 or 1");
    h[i] = t[i] / e[i] - (1.0 - t[i]) / (1.0 - e[i]);
    observed[i] = t[i] == 1.0 ? mu1[i] : mu0[i];
  }
  const double denom = h.squaredNorm();
  if (denom <= 0.0)
    throw SolverError("degenerate clever covariate: no targeting direction");
  const double epsilon = h.dot(y - observed) / denom;

  Eigen::VectorXd m1s(n), m0s(n), mustar(n);
  for (int i = 0; i < n; ++i) {
    m1s[i] = mu1[i] + epsilon / e[i];
    m0s[i] = mu0[i] - epsilon / (1.0 - e[i]);
    mustar[i] = t[i] == 1.0 ? m1s[i] : m0s[i];
  }
  const double score = std::abs(h.dot(y - mustar)) / n;
  if (score > 1e-10)
    throw SolverError("targeting failed to zero the score equation");

  const double theta = (m1s - m0s).mean();
  Eigen::VectorXd influence(n);
  for (int i = 0; i < n; ++i)
    influence[i] = h[i] * (y[i] - mustar[i]) + (m1s[i] - m0s[i]) - theta;
  return {theta, sample_sd(influence) / std::sqrt(static_cast<double>(n)),
          epsilon};
}

MatchTable nearest_neighbor_match(const Eigen::MatrixXd& scores,
                                  const Eigen::VectorXd& t, int k) {
  const int n = static_cast<int>(scores.rows());
  if (t.size() != n)
    throw ValidationError("score rows and treatment length differ");
  if (!scores.allFinite())
    throw ValidationError("matching scores contain non-finite values");
  if (k < 1) throw ValidationError("match count must be at least 1");
  std::vector<int> arm[2];
  for (int i = 0; i < n; ++i) {
    if (t[i] != 0.0 && t[i] != 1.0)
      throw ValidationError("treatment entries must be exactly 0 or 1");
    arm[t[i] == 1.0 ? 1 : 0].push_back(i);
  }
  if (arm[0].empty() || arm[1].empty())
    throw ValidationError("matching needs units in both arms");
  if (k > static_cast<int>(std::min(arm[0].size(), arm[1].size())))
    throw ValidationError("match count exceeds an arm size");

  // Standardize columns so both scores contribute comparably; constant
  // columns contribute nothing after centering.
  Eigen::MatrixXd z = scores;
  for (int j = 0; j < z.cols(); ++j) {
    const double mean = z.col(j).mean();
    const double sd = sample_sd(z.col(j));
    z.col(j) = (z.col(j).array() - mean) / (sd > 0.0 ? sd : 1.0);
  }

  MatchTable mt;
  mt.matches.resize(n);
  mt.use_counts.assign(n, 0);
  std::vector<std::pair<double, int>> cand;
  for (int i = 0; i < n; ++i) {
    const std::vector<int>& pool = arm[t[i] == 1.0 ? 0 : 1];
    cand.clear();
    for (const int j : pool)
      cand.emplace_back((z.row(i) - z.row(j)).squaredNorm(), j);
    std::sort(cand.begin(), cand.end());
    mt.matches[i].reserve(k);
    for (int a = 0; a < k; ++a) {
      mt.matches[i].push_back(cand[a].second);
      ++mt.use_counts[cand[a].second];
    }
  }
  return mt;
}

EstimatorOutput estimate_ate(const Dataset& d, MethodId m,
                             const EstimatorSettings& s) {
  check_settings(s);
  d.validate();
  const int min_arm =
      (m == MethodId::DML || m == MethodId::DMLPS) ? std::max(5, s.dml_folds) : 2;
  if (d.treated_count() < min_arm || d.control_count() < min_arm)
    throw EstimatorError(m, "needs at least " + std::to_string(min_arm) +
                                " units in each arm");

  const auto start = std::chrono::steady_clock::now();
  EstimatorOutput out;
  out.method = m;
  try {
    const Dataset ds = standardize_columns(d).first;
    switch (m) {
      case MethodId::DoublePS:
        run_double_ps(ds, s, out);
        break;
      case MethodId::Debiasing:
        run_debiasing(ds, s, out);
        break;
      case MethodId::DRLasso:
        run_dr_lasso(ds, s, out);
        break;
      case MethodId::DRME:
        run_drme(ds, s, out);
        break;
      case MethodId::TMLE:
        run_tmle(ds, s, out);
        break;
      case MethodId::TMLEScreen:
        run_tmle_screen(ds, s, out);
        break;
      case MethodId::DML:
        run_dml(ds, s, MethodId::DML, /*refits=*/false, out);
        break;
      case MethodId::DMLPS:
        run_dml(ds, s, MethodId::DMLPS, /*refits=*/true, out);
        break;
    }
  } catch (const EstimatorError&) {
    throw;
  } catch (const std::exception& ex) {
    throw EstimatorError(m, ex.what());
  }

  if (!std::isfinite(out.theta_hat) || !std::isfinite(out.sigma_hat))
    throw EstimatorError(m, "produced a non-finite estimate");
  // Degenerate fits (for example an exactly saturated regression) can yield
  // a zero standard error; keep sigma strictly positive.
  out.sigma_hat =
      std::max(out.sigma_hat, 1e-12 * std::max(1.0, std::abs(out.theta_hat)));
  out.diagnostics["wall_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  return out;
}

}  // namespace ateavg::estimators
