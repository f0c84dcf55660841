#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "ateavg/dataset.hpp"
#include "ateavg/errors.hpp"

namespace ateavg::simulation {

// ---------------------------------------------------------------------------
// Synthetic benchmark scenarios.  Each scenario fixes a joint law for
// (X, T, Y) with a known average treatment effect; generators are
// deterministic functions of (scenario, seed) so replications can be
// produced independently and in any order.
// ---------------------------------------------------------------------------
enum class ScenarioId {
  S1,  // sparse linear outcome, probit treatment, exchangeable X
  S2,  // clustered X, dense outcome coefficients, extreme arm probabilities
  S3,  // many small outcome coefficients, two-variable treatment model
  S4,  // S3 treatment, nonlinear outcome surface
  S5,  // shifted probit treatment, outcome with treatment interaction
  A1,  // no confounding: zero outcome and treatment coefficients
  A2,  // alternative sparse outcome/treatment coefficients
  A3,  // S2 clusters with milder arm probabilities and 1/j coefficients
  A4,  // S1 outcome, nonlinear (non-probit) treatment model
  A5,  // A4 treatment, S4 outcome surface
};

inline constexpr ScenarioId kAllScenarios[] = {
    ScenarioId::S1, ScenarioId::S2, ScenarioId::S3, ScenarioId::S4,
    ScenarioId::S5, ScenarioId::A1, ScenarioId::A2, ScenarioId::A3,
    ScenarioId::A4, ScenarioId::A5};

std::string to_string(ScenarioId id);
ScenarioId scenario_from_string(const std::string& name);

// Number of units drawn per replication (300 for the cluster scenarios,
// 150 otherwise).  Every scenario uses 300 covariates.
int scenario_n(ScenarioId id);
inline constexpr int kScenarioP = 300;

// The average treatment effect implied by the scenario's outcome model.
double true_ate(ScenarioId id);

// Outcome coefficient vector for scenarios whose outcome surface is linear
// in the covariates.  Throws ValidationError for S4, S5, and A5, whose
// outcome models are not described by a single coefficient vector.
Eigen::VectorXd scenario_beta(ScenarioId id);

struct ScenarioDraw {
  Dataset dataset;
  double true_ate = 0.0;
  ScenarioId scenario = ScenarioId::S1;
  std::uint64_t seed = 0;
};

// One replication of the scenario's data-generating process.
ScenarioDraw generate_scenario(ScenarioId id, std::uint64_t seed);

// Validation hook: the same draw plus the generator's own evaluation of both
// potential outcomes (and, for cluster scenarios, the latent cluster labels).
// Estimators must never consume these extras; they exist so tests can check
// the transcription of each mechanism against its stated treatment effect.
// n_override replaces the scenario's default sample size when positive.
struct PotentialDraw {
  ScenarioDraw draw;
  Eigen::VectorXd y1;        // outcome each unit would have under treatment
  Eigen::VectorXd y0;        // outcome each unit would have under control
  Eigen::VectorXi clusters;  // cluster label per unit; empty if none
};

PotentialDraw generate_with_potentials(ScenarioId id, std::uint64_t seed,
                                       int n_override = 0);

// n draws from the p-variate normal with unit variances and constant
// correlation rho between distinct coordinates.  Requires
// -1/(p-1) < rho < 1 so the correlation matrix is positive definite.
Eigen::MatrixXd sample_exchangeable_mvn(int n, int p, double rho,
                                        std::uint64_t seed);

}  // namespace ateavg::simulation
