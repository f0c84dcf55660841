#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "ateavg/method.hpp"

namespace ateavg {

// ---------------------------------------------------------------------------
// Ensemble of candidate estimates: weighted average with the conservative
// variance bound obtained by treating all pairwise estimator correlations
// as 1.  With nonnegative weights the point estimate always lies inside
// [min, max] of the inputs.
// ---------------------------------------------------------------------------
struct AveragedEstimate {
  double theta_A = 0.0;
  double sigma_A = 0.0;              // sqrt of the conservative variance
  std::vector<double> weights;       // over `included`, sums to 1
  std::vector<MethodId> included;    // methods entering the average
  double level = 0.95;
  std::pair<double, double> interval{0.0, 0.0};
  bool reject_null = false;          // H0: ATE = 0; reject iff 0 outside interval
};

// Sum_i Sum_j w_i w_j sigma_i sigma_j, computed as the literal double sum;
// algebraically identical to (Sum_i w_i sigma_i)^2.  Throws on nonpositive
// sigmas or malformed weights.
double conservative_variance(const std::vector<double>& sigmas,
                             const std::vector<double>& weights);

// theta +/- z_{(1+level)/2} * sigma.
std::pair<double, double> wald_interval(double theta, double sigma, double level);

// Weighted average of >= 2 estimates.  Default weights are equal (1/M).
// Supplied weights must be nonnegative and sum to 1 within 1e-10.
AveragedEstimate average_estimates(
    const std::vector<EstimatorOutput>& outputs,
    const std::optional<std::vector<double>>& weights = std::nullopt,
    double level = 0.95);

// Equal-weight average after dropping exactly one estimator attaining the
// maximum point estimate and one attaining the minimum (ties: drop the one
// with the larger sigma, then the lowest MethodId ordinal).  Needs M >= 4.
AveragedEstimate trimmed_average(const std::vector<EstimatorOutput>& outputs,
                                 double level = 0.95);

}  // namespace ateavg
