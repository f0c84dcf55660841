#include "ateavg/averaging.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <boost/math/distributions/normal.hpp>

namespace ateavg {

double conservative_variance(const std::vector<double>& sigmas,
                             const std::vector<double>& weights) {
  if (sigmas.size() != weights.size())
    throw ValidationError("sigma and weight vectors differ in length");
  for (double s : sigmas)
    if (!(s > 0.0) || !std::isfinite(s))
      throw ValidationError("standard errors must be positive and finite");
  double v = 0.0;
  for (std::size_t i = 0; i < sigmas.size(); ++i)
    for (std::size_t j = 0; j < sigmas.size(); ++j)
      v += weights[i] * weights[j] * sigmas[i] * sigmas[j];
  return v;
}

std::pair<double, double> wald_interval(double theta, double sigma,
                                        double level) {
  if (!(level > 0.0 && level < 1.0))
    throw ValidationError("confidence level must lie in (0, 1)");
  const boost::math::normal_distribution<double> norm;
  const double z = boost::math::quantile(norm, 0.5 * (1.0 + level));
  return {theta - z * sigma, theta + z * sigma};
}

namespace {

void check_weights(const std::vector<double>& w, std::size_t m) {
  if (w.size() != m)
    throw ValidationError("weight vector length " + std::to_string(w.size()) +
                          " does not match " + std::to_string(m) + " estimates");
  double sum = 0.0;
  for (double wi : w) {
    if (wi < 0.0 || !std::isfinite(wi))
      throw ValidationError("weights must be nonnegative and finite");
    sum += wi;
  }
  if (std::abs(sum - 1.0) > 1e-10)
    throw ValidationError("weights must sum to 1 (got " + std::to_string(sum) + ")");
}

AveragedEstimate combine(const std::vector<EstimatorOutput>& outputs,
                         const std::vector<double>& weights, double level) {
  AveragedEstimate out;
  out.level = level;
  out.weights = weights;
  std::vector<double> sigmas;
  sigmas.reserve(outputs.size());
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const EstimatorOutput& o = outputs[i];
    if (!std::isfinite(o.theta_hat))
      throw ValidationError(to_string(o.method) + " estimate is non-finite");
    out.included.push_back(o.method);
    out.theta_A += weights[i] * o.theta_hat;
    sigmas.push_back(o.sigma_hat);
  }
  out.sigma_A = std::sqrt(conservative_variance(sigmas, weights));
  out.interval = wald_interval(out.theta_A, out.sigma_A, level);
  out.reject_null = 0.0 < out.interval.first || 0.0 > out.interval.second;
  return out;
}

}  // namespace

AveragedEstimate average_estimates(
    const std::vector<EstimatorOutput>& outputs,
    const std::optional<std::vector<double>>& weights, double level) {
  const std::size_t m = outputs.size();
  if (m < 2) throw ValidationError("averaging needs at least 2 estimates");
  std::vector<double> w;
  if (weights) {
    check_weights(*weights, m);
    w = *weights;
  } else {
    w.assign(m, 1.0 / static_cast<double>(m));
  }
  return combine(outputs, w, level);
}

AveragedEstimate trimmed_average(const std::vector<EstimatorOutput>& outputs,
                                 double level) {
  const std::size_t m = outputs.size();
  if (m < 4)
    throw ValidationError("trimming needs at least 4 estimates, got " +
                          std::to_string(m));
  for (const EstimatorOutput& o : outputs)
    if (!std::isfinite(o.theta_hat))
      throw ValidationError(to_string(o.method) + " estimate is non-finite");

  // Among estimates attaining the extreme value, drop the one with the
  // larger sigma; remaining ties fall to the lowest MethodId ordinal.
  const auto pick = [&](bool maximum, std::size_t skip) {
    std::size_t best = skip == 0 ? 1 : 0;
    for (std::size_t i = best + 1; i < m; ++i) {
      if (i == skip) continue;
      const double a = outputs[i].theta_hat, b = outputs[best].theta_hat;
      if (maximum ? a > b : a < b) {
        best = i;
      } else if (a == b) {
        const double sa = outputs[i].sigma_hat, sb = outputs[best].sigma_hat;
        if (sa > sb ||
            (sa == sb && static_cast<int>(outputs[i].method) <
                             static_cast<int>(outputs[best].method)))
          best = i;
      }
    }
    return best;
  };
  const std::size_t drop_max = pick(true, m);  // skip index m: consider all
  const std::size_t drop_min = pick(false, drop_max);

  std::vector<EstimatorOutput> kept;
  kept.reserve(m - 2);
  for (std::size_t i = 0; i < m; ++i)
    if (i != drop_max && i != drop_min) kept.push_back(outputs[i]);
  const std::vector<double> w(kept.size(), 1.0 / static_cast<double>(kept.size()));
  return combine(kept, w, level);
}

}  // namespace ateavg
