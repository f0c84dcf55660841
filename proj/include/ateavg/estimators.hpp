#pragma once

#include <vector>

#include <Eigen/Dense>

#include "ateavg/dataset.hpp"
#include "ateavg/method.hpp"

namespace ateavg::estimators {

// ---------------------------------------------------------------------------
// Augmented inverse-probability-weighted (doubly robust) score.  From fitted
// outcome means under each arm and a clipped propensity vector, returns the
// mean influence value and its standard error sd(psi)/sqrt(n).
// ---------------------------------------------------------------------------
struct ScoreSummary {
  double theta = 0.0;
  double sigma = 0.0;
};

ScoreSummary aipw_point_and_var(const Eigen::VectorXd& y,
                                const Eigen::VectorXd& t,
                                const Eigen::VectorXd& mu1,
                                const Eigen::VectorXd& mu0,
                                const Eigen::VectorXd& e);

// ---------------------------------------------------------------------------
// One-step targeted update of fitted outcome means along the clever
// covariate H = T/e - (1-T)/(1-e).  The fluctuation is linear, so the
// post-update score sum_i H_i (Y_i - mu*_i) is zero by least-squares
// orthogonality; the returned sigma comes from the efficient influence
// curve.
// ---------------------------------------------------------------------------
struct TargetingResult {
  double theta = 0.0;
  double sigma = 0.0;
  double epsilon = 0.0;  // fitted fluctuation coefficient
};

TargetingResult tmle_target(const Eigen::VectorXd& y, const Eigen::VectorXd& t,
                            const Eigen::VectorXd& mu1,
                            const Eigen::VectorXd& mu0,
                            const Eigen::VectorXd& e);

// ---------------------------------------------------------------------------
// k-nearest-neighbour matching with replacement across arms.  Distances are
// Euclidean on score columns standardized to unit variance; ties break to
// the lowest index.  use_counts[i] is the number of times unit i serves as
// someone else's match.
// ---------------------------------------------------------------------------
struct MatchTable {
  std::vector<std::vector<int>> matches;  // per unit, k opposite-arm indices
  std::vector<int> use_counts;
};

MatchTable nearest_neighbor_match(const Eigen::MatrixXd& scores,
                                  const Eigen::VectorXd& t, int k);

// Runs one candidate method end to end.  Throws EstimatorError (carrying the
// method) on solver failure so a caller can record a failed replication
// without aborting the rest.
EstimatorOutput estimate_ate(const Dataset& d, MethodId m,
                             const EstimatorSettings& s);

}  // namespace ateavg::estimators
