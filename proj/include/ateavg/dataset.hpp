#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ateavg/errors.hpp"
#include "ateavg/rng.hpp"

namespace ateavg {

// ---------------------------------------------------------------------------
// Observational data: covariates X (n x p), binary treatment, real outcome.
// Instances are validated on construction and treated as immutable afterwards;
// they are safe to share across worker threads.
// ---------------------------------------------------------------------------
struct Dataset {
  Eigen::MatrixXd covariates;            // n x p
  Eigen::VectorXd treatment;             // entries exactly 0 or 1
  Eigen::VectorXd outcome;               // length n
  std::vector<std::string> column_names; // p covariate names

  int n() const { return static_cast<int>(covariates.rows()); }
  int p() const { return static_cast<int>(covariates.cols()); }
  int treated_count() const;
  int control_count() const;

  // Throws ValidationError if any invariant is violated:
  // n >= 2, p >= 1, finite X and Y, treatment in {0,1}, both arms non-empty.
  void validate() const;
};

Dataset make_dataset(Eigen::MatrixXd covariates, Eigen::VectorXd treatment,
                     Eigen::VectorXd outcome,
                     std::vector<std::string> column_names = {});

// CSV schema: header "Y,T,X1,...,Xp", one row per unit.  Floating-point
// values are written with 17 significant digits so load(write(d)) round-trips.
Dataset load_csv(const std::string& path);
void write_csv(const Dataset& d, const std::string& path);

// ---------------------------------------------------------------------------
// Column standardization (mean 0, sd 1 with the n-1 denominator).  Constant
// columns are dropped and recorded; the record maps coefficients fit on the
// standardized scale back to the original one.
// ---------------------------------------------------------------------------
struct Standardization {
  std::vector<int> kept;     // original indices of retained columns
  std::vector<int> dropped;  // original indices of constant columns
  Eigen::VectorXd mean;      // per retained column
  Eigen::VectorXd scale;     // per retained column (original sd)
};

std::pair<Dataset, Standardization> standardize_columns(const Dataset& d);

// Coefficients on the standardized scale -> (intercept, coefficients) on the
// original scale, with zeros for dropped columns.
std::pair<double, Eigen::VectorXd> unstandardize_coefficients(
    const Standardization& s, double intercept,
    const Eigen::VectorXd& coefficients, int original_p);

// ---------------------------------------------------------------------------
// Fold assignment for cross-fitting.  Fold sizes differ by at most one and
// every fold holds at least one treated and one control unit.
// ---------------------------------------------------------------------------
struct FoldAssignment {
  std::vector<int> fold_of;  // length n, values in 1..K
  int K = 0;
};

FoldAssignment assign_folds(const Dataset& d, int K, std::uint64_t seed);

namespace folds {

// Balanced fold labels in 1..K for n units, shuffled by rng.
std::vector<int> balanced(int n, int K, rng::Philox& gen);

// Balanced fold labels where every fold receives at least one unit from each
// class (requires each class count >= K).  The assignment is invariant under
// swapping the two class labels: a unit's fold depends only on the class
// partition and the unit's rank within its class in the shuffled order.
std::vector<int> stratified(const std::vector<int>& cls, int K,
                            rng::Philox& gen);

}  // namespace folds

}  // namespace ateavg
