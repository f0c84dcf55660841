#include "ateavg/simulation.hpp"

#include <cmath>
#include <initializer_list>
#include <string>
#include <utility>

#include "ateavg/rng.hpp"

namespace ateavg::simulation {

namespace {

constexpr const char* kNames[] = {"S1", "S2", "S3", "S4", "S5",
                                  "A1", "A2", "A3", "A4", "A5"};

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::VectorXd with_head(std::initializer_list<double> head) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(kScenarioP);
  int j = 0;
  for (const double value : head) v[j++] = value;
  return v;
}

// Outcome coefficients 0.2, 0.3 followed by 36 alternating +-0.15 pairs.
Eigen::VectorXd small_effects_beta() {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(kScenarioP);
  v[0] = 0.2;
  v[1] = 0.3;
  for (int j = 2; j < 74; ++j) v[j] = (j % 2 == 0) ? 0.15 : -0.15;
  return v;
}

// Dense coefficients proportional to 1/sqrt(j) (or 1/j), scaled so the
// squared Euclidean norm is exactly 18.
Eigen::VectorXd dense_cluster_beta(bool inverse_sqrt) {
  Eigen::VectorXd v(kScenarioP);
  for (int j = 0; j < kScenarioP; ++j) {
    const double rank = static_cast<double>(j + 1);
    v[j] = inverse_sqrt ? 1.0 / std::sqrt(rank) : 1.0 / rank;
  }
  v *= std::sqrt(18.0 / v.squaredNorm());
  return v;
}

// Draws from the exchangeable-correlation normal using an already-keyed
// stream.  For rho >= 0 this uses the shared-factor construction
// X = sqrt(1-rho)*Z + sqrt(rho)*z0*1'; negative rho (admissible down to
// -1/(p-1)) instead applies the symmetric square root a*I + b*11' of the
// correlation matrix, which coincides in distribution.
Eigen::MatrixXd exchangeable_mvn(int n, int p, double rho, rng::Philox& gen) {
  if (!(rho < 1.0) || (p > 1 && !(rho > -1.0 / (p - 1))))
    throw ValidationError(
        "exchangeable correlation must lie strictly between -1/(p-1) and 1");
  Eigen::MatrixXd z(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) z(i, j) = gen.normal();
  if (rho == 0.0) return z;
  if (rho > 0.0) {
    Eigen::VectorXd shared(n);
    for (int i = 0; i < n; ++i) shared[i] = gen.normal();
    Eigen::MatrixXd x = std::sqrt(1.0 - rho) * z;
    x.colwise() += std::sqrt(rho) * shared;
    return x;
  }
  const double a = std::sqrt(1.0 - rho);
  const double b = (std::sqrt(1.0 + (p - 1) * rho) - a) / p;
  Eigen::VectorXd row_sums = z.rowwise().sum();
  Eigen::MatrixXd x = a * z;
  x.colwise() += b * row_sums;
  return x;
}

}  // namespace

std::string to_string(ScenarioId id) {
  return kNames[static_cast<int>(id)];
}

ScenarioId scenario_from_string(const std::string& name) {
  for (const ScenarioId id : kAllScenarios)
    if (name == kNames[static_cast<int>(id)]) return id;
  std::string valid;
  for (const char* n : kNames) {
    if (!valid.empty()) valid += ", ";
    valid += n;
  }
  throw ValidationError("unknown scenario '" + name + "'; valid names: " + valid);
}

int scenario_n(ScenarioId id) {
  return (id == ScenarioId::S2 || id == ScenarioId::A3) ? 300 : 150;
}

double true_ate(ScenarioId id) {
  return (id == ScenarioId::S2 || id == ScenarioId::A3) ? 10.0 : 1.0;
}

Eigen::VectorXd scenario_beta(ScenarioId id) {
  switch (id) {
    case ScenarioId::S1:
    case ScenarioId::A4:
      return with_head({0.75, 1.0, 0.6, -0.8, -0.7});
    case ScenarioId::S2:
      return dense_cluster_beta(true);
    case ScenarioId::S3:
      return small_effects_beta();
    case ScenarioId::A1:
      return Eigen::VectorXd::Zero(kScenarioP);
    case ScenarioId::A2:
      return with_head({0.9, 0.9, 0.2, 0.2, 0.0, 0.0, 0.9, 0.9});
    case ScenarioId::A3:
      return dense_cluster_beta(false);
    default:
      throw ValidationError("scenario " + to_string(id) +
                            " has a nonlinear outcome surface with no single "
                            "coefficient vector");
  }
}

Eigen::MatrixXd sample_exchangeable_mvn(int n, int p, double rho,
                                        std::uint64_t seed) {
  if (n < 1 || p < 1)
    throw ValidationError("sample dimensions must be positive");
  rng::Philox gen(rng::derive_key(rng::tag("exchangeable-mvn"), seed));
  return exchangeable_mvn(n, p, rho, gen);
}

PotentialDraw generate_with_potentials(ScenarioId id, std::uint64_t seed,
                                       int n_override) {
  const int n = n_override > 0 ? n_override : scenario_n(id);
  if (n < 2) throw ValidationError("scenario draws need at least 2 units");
  const int p = kScenarioP;
  rng::Philox gen(rng::derive_key(rng::tag("scenario-draw"),
                                  static_cast<std::uint64_t>(id), seed));

  // Covariates and per-unit treatment probabilities. Draw order is fixed:
  // covariates (with cluster centers first where applicable), then the
  // treatment indicators, then the outcome noise.
  Eigen::MatrixXd x;
  Eigen::VectorXd prob(n);
  Eigen::VectorXi clusters;
  const bool clustered = id == ScenarioId::S2 || id == ScenarioId::A3;
  if (clustered) {
    Eigen::MatrixXd centers(20, p);
    for (int k = 0; k < 20; ++k)
      for (int j = 0; j < p; ++j) centers(k, j) = gen.normal();
    const double lo = id == ScenarioId::S2 ? 0.1 : 0.25;
    clusters.resize(n);
    x.resize(n, p);
    for (int i = 0; i < n; ++i) {
      const int k = static_cast<int>(gen.uniform_int(20));
      clusters[i] = k;
      for (int j = 0; j < p; ++j) x(i, j) = centers(k, j) + gen.normal();
      prob[i] = k < 10 ? lo : 1.0 - lo;
    }
  } else {
    x = exchangeable_mvn(n, p, 0.3, gen);
    switch (id) {
      case ScenarioId::S1: {
        const Eigen::VectorXd score =
            x * with_head({0.15, 0.2, 0.0, 0.0, -0.4});
        for (int i = 0; i < n; ++i) prob[i] = normal_cdf(score[i]);
        break;
      }
      case ScenarioId::S3:
      case ScenarioId::S4: {
        const Eigen::VectorXd score = x * with_head({0.6, -0.5});
        for (int i = 0; i < n; ++i) prob[i] = normal_cdf(score[i]);
        break;
      }
      case ScenarioId::S5: {
        const Eigen::VectorXd score = x * with_head({0.2, 0.0, 0.4, -0.5});
        for (int i = 0; i < n; ++i) prob[i] = normal_cdf(-0.7 + score[i]);
        break;
      }
      case ScenarioId::A1:
        prob.setConstant(0.5);
        break;
      case ScenarioId::A2: {
        const Eigen::VectorXd score =
            x * with_head({0.4, 0.9, -0.5, -0.7, -0.3, 0.6});
        for (int i = 0; i < n; ++i) prob[i] = normal_cdf(score[i]);
        break;
      }
      case ScenarioId::A4:
      case ScenarioId::A5:
        for (int i = 0; i < n; ++i) {
          const double x1 = x(i, 0), x2 = x(i, 1), x3 = x(i, 2);
          prob[i] = expit(0.5 * x1 * x1 * x1 + 0.3 * x1 * x1 -
                          0.3 * x2 * x2 * x2 * x2 + 0.4 * x3 * x3);
        }
        break;
      default:
        break;  // cluster scenarios handled above
    }
  }

  Eigen::VectorXd t(n);
  for (int i = 0; i < n; ++i) t[i] = gen.uniform() < prob[i] ? 1.0 : 0.0;

  // Conditional outcome means under control (m0) and treatment (m1).
  Eigen::VectorXd m0(n), m1(n);
  switch (id) {
    case ScenarioId::S1:
    case ScenarioId::S3:
    case ScenarioId::A1:
    case ScenarioId::A2:
    case ScenarioId::A4:
      m0 = x * scenario_beta(id);
      m1 = m0.array() + 1.0;
      break;
    case ScenarioId::S2:
    case ScenarioId::A3:
      m0 = x * scenario_beta(id);
      m1 = m0.array() + 10.0;
      break;
    case ScenarioId::S4:
    case ScenarioId::A5:
      for (int i = 0; i < n; ++i) {
        const double x1 = x(i, 0), x2 = x(i, 1), x3 = x(i, 2);
        m0[i] = -2.0 + 0.5 * x1 + 0.5 * x2 * x2 + 0.8 * x2 * x2 * x2 +
                0.3 * std::exp(x3);
      }
      m1 = m0.array() + 1.0;
      break;
    case ScenarioId::S5:
      for (int i = 0; i < n; ++i) {
        const double x1 = x(i, 0), x2 = x(i, 1), x3 = x(i, 2);
        m0[i] = -2.0 + 0.5 * x1 + 0.8 * x2 + 0.4 * x3;
        m1[i] = m0[i] + 1.0 + 0.5 * x3;
      }
      break;
  }

  Eigen::VectorXd eps(n);
  for (int i = 0; i < n; ++i) eps[i] = gen.normal();

  PotentialDraw out;
  out.y1 = m1 + eps;
  out.y0 = m0 + eps;
  out.clusters = std::move(clusters);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = t[i] == 1.0 ? out.y1[i] : out.y0[i];
  out.draw.dataset = make_dataset(std::move(x), std::move(t), std::move(y));
  out.draw.true_ate = true_ate(id);
  out.draw.scenario = id;
  out.draw.seed = seed;
  return out;
}

ScenarioDraw generate_scenario(ScenarioId id, std::uint64_t seed) {
  return std::move(generate_with_potentials(id, seed).draw);
}

}  // namespace ateavg::simulation
