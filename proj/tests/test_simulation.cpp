#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ateavg/glm.hpp"
#include "ateavg/simulation.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace ateavg;
using simulation::ScenarioId;

namespace {

double column_correlation(const Eigen::MatrixXd& x, int a, int b) {
  const Eigen::VectorXd ca = x.col(a).array() - x.col(a).mean();
  const Eigen::VectorXd cb = x.col(b).array() - x.col(b).mean();
  return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

double mean_offdiagonal_correlation(const Eigen::MatrixXd& x) {
  double total = 0.0;
  int pairs = 0;
  for (int a = 0; a < x.cols(); ++a)
    for (int b = a + 1; b < x.cols(); ++b) {
      total += column_correlation(x, a, b);
      ++pairs;
    }
  return total / pairs;
}

}  // namespace

TEST_CASE("exchangeable normal sampler has the stated moments") {
  const int n = 10000, p = 5;

  SUBCASE("independent case: all pairwise correlations near zero") {
    const Eigen::MatrixXd x = simulation::sample_exchangeable_mvn(n, p, 0.0, 11);
    for (int a = 0; a < p; ++a)
      for (int b = a + 1; b < p; ++b)
        CHECK(std::abs(column_correlation(x, a, b)) < 0.03);
    for (int a = 0; a < p; ++a) {
      const double var =
          (x.col(a).array() - x.col(a).mean()).square().sum() / (n - 1);
      CHECK(var == doctest::Approx(1.0).epsilon(0.05));
    }
  }

  SUBCASE("positive correlation via the shared factor") {
    const Eigen::MatrixXd x = simulation::sample_exchangeable_mvn(n, p, 0.3, 12);
    CHECK(std::abs(mean_offdiagonal_correlation(x) - 0.3) < 0.03);
    for (int a = 0; a < p; ++a) {
      const double var =
          (x.col(a).array() - x.col(a).mean()).square().sum() / (n - 1);
      CHECK(var == doctest::Approx(1.0).epsilon(0.05));
    }
  }

  SUBCASE("negative correlation via the symmetric root") {
    const Eigen::MatrixXd x =
        simulation::sample_exchangeable_mvn(n, p, -0.2, 13);
    CHECK(std::abs(mean_offdiagonal_correlation(x) - (-0.2)) < 0.03);
    for (int a = 0; a < p; ++a) {
      const double var =
          (x.col(a).array() - x.col(a).mean()).square().sum() / (n - 1);
      CHECK(var == doctest::Approx(1.0).epsilon(0.05));
    }
  }

  SUBCASE("deterministic per seed") {
    const Eigen::MatrixXd a = simulation::sample_exchangeable_mvn(50, 4, 0.3, 5);
    const Eigen::MatrixXd b = simulation::sample_exchangeable_mvn(50, 4, 0.3, 5);
    const Eigen::MatrixXd c = simulation::sample_exchangeable_mvn(50, 4, 0.3, 6);
    CHECK((a - b).norm() == 0.0);
    CHECK((a - c).norm() > 0.0);
  }

  SUBCASE("correlation outside the positive-definite range is rejected") {
    CHECK_THROWS_AS(simulation::sample_exchangeable_mvn(10, 5, 1.0, 0),
                    ValidationError);
    CHECK_THROWS_AS(simulation::sample_exchangeable_mvn(10, 5, -0.25, 0),
                    ValidationError);
    CHECK_THROWS_AS(simulation::sample_exchangeable_mvn(0, 5, 0.3, 0),
                    ValidationError);
  }
}

TEST_CASE("scenario names round-trip") {
  for (const ScenarioId id : simulation::kAllScenarios)
    CHECK(simulation::scenario_from_string(simulation::to_string(id)) == id);
  CHECK_THROWS_AS(simulation::scenario_from_string("S6"), ValidationError);
  CHECK_THROWS_AS(simulation::scenario_from_string("s1"), ValidationError);
}

TEST_CASE("scenario draws have the documented shape and are deterministic") {
  for (const ScenarioId id : simulation::kAllScenarios) {
    CAPTURE(simulation::to_string(id));
    const simulation::ScenarioDraw draw = simulation::generate_scenario(id, 7);
    const bool clustered = id == ScenarioId::S2 || id == ScenarioId::A3;
    CHECK(draw.dataset.n() == (clustered ? 300 : 150));
    CHECK(draw.dataset.p() == 300);
    CHECK(draw.true_ate == (clustered ? 10.0 : 1.0));
    CHECK(draw.scenario == id);
    CHECK(draw.seed == 7);

    const simulation::ScenarioDraw again = simulation::generate_scenario(id, 7);
    CHECK((draw.dataset.covariates - again.dataset.covariates).norm() == 0.0);
    CHECK((draw.dataset.treatment - again.dataset.treatment).norm() == 0.0);
    CHECK((draw.dataset.outcome - again.dataset.outcome).norm() == 0.0);

    const simulation::ScenarioDraw other = simulation::generate_scenario(id, 8);
    CHECK((draw.dataset.covariates - other.dataset.covariates).norm() > 0.0);
  }
}

TEST_CASE("factual outcomes agree with the reported potential outcomes") {
  const simulation::PotentialDraw pd =
      simulation::generate_with_potentials(ScenarioId::S5, 3);
  for (int i = 0; i < pd.draw.dataset.n(); ++i) {
    const double expected = pd.draw.dataset.treatment[i] == 1.0 ? pd.y1[i]
                                                                : pd.y0[i];
    CHECK(pd.draw.dataset.outcome[i] == expected);
  }
  CHECK(pd.clusters.size() == 0);

  const simulation::PotentialDraw small =
      simulation::generate_with_potentials(ScenarioId::S1, 3, 10);
  CHECK(small.draw.dataset.n() == 10);
  CHECK(small.y1.size() == 10);

  const simulation::PotentialDraw s2 =
      simulation::generate_with_potentials(ScenarioId::S2, 3);
  CHECK(s2.clusters.size() == 300);
  CHECK(s2.clusters.minCoeff() >= 0);
  CHECK(s2.clusters.maxCoeff() < 20);
}

TEST_CASE("treated fraction is interior for the probit scenarios") {
  // Pool draws so the total crosses 10^4 units; a centered index inside a
  // symmetric link keeps the marginal treatment rate at one half.
  double treated = 0.0, total = 0.0;
  for (std::uint64_t seed = 0; seed < 67; ++seed) {
    const simulation::ScenarioDraw draw =
        simulation::generate_scenario(ScenarioId::S1, seed);
    treated += draw.dataset.treatment.sum();
    total += draw.dataset.n();
  }
  CHECK(total >= 10000);
  const double fraction = treated / total;
  CHECK(fraction > 0.3);
  CHECK(fraction < 0.7);
}

TEST_CASE("potential-outcome means recover each scenario's treatment effect") {
  // Monte Carlo transcription check: pool the generator's own potential
  // outcomes to 10^5 units per scenario and compare the mean difference
  // against the known effect within three standard errors.  Scenarios with a
  // purely additive effect have (numerically) zero variance, hence the small
  // absolute floor.
  for (const ScenarioId id : simulation::kAllScenarios) {
    CAPTURE(simulation::to_string(id));
    double sum = 0.0, sumsq = 0.0;
    long count = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const simulation::PotentialDraw pd =
          simulation::generate_with_potentials(id, seed, 1000);
      const Eigen::VectorXd diff = pd.y1 - pd.y0;
      sum += diff.sum();
      sumsq += diff.squaredNorm();
      count += diff.size();
    }
    const double mean = sum / count;
    const double var = (sumsq - count * mean * mean) / (count - 1);
    const double tol = 3.0 * std::sqrt(std::max(var, 0.0) / count) + 1e-9;
    CHECK(std::abs(mean - simulation::true_ate(id)) <= tol);
  }
}

TEST_CASE("cluster labels are uniform over the twenty centers") {
  // Chi-square goodness of fit with 19 degrees of freedom; 43.8202 is the
  // 0.999 quantile of that distribution.
  for (const ScenarioId id : {ScenarioId::S2, ScenarioId::A3}) {
    CAPTURE(simulation::to_string(id));
    std::vector<long> counts(20, 0);
    long total = 0;
    for (std::uint64_t seed = 0; seed < 34; ++seed) {
      const simulation::PotentialDraw pd =
          simulation::generate_with_potentials(id, seed);
      for (int i = 0; i < pd.clusters.size(); ++i) ++counts[pd.clusters[i]];
      total += pd.clusters.size();
    }
    CHECK(total >= 10000);
    const double expected = static_cast<double>(total) / 20.0;
    double stat = 0.0;
    for (const long c : counts) {
      const double d = c - expected;
      stat += d * d / expected;
    }
    CHECK(stat < 43.8202);
  }
}

TEST_CASE("dense cluster coefficients have squared norm 18") {
  CHECK(simulation::scenario_beta(ScenarioId::S2).squaredNorm() ==
        doctest::Approx(18.0).epsilon(1e-12));
  CHECK(simulation::scenario_beta(ScenarioId::A3).squaredNorm() ==
        doctest::Approx(18.0).epsilon(1e-12));
  // The two scenarios decay at different rates, so the vectors differ.
  CHECK((simulation::scenario_beta(ScenarioId::S2) -
         simulation::scenario_beta(ScenarioId::A3))
            .norm() > 1.0);
}

TEST_CASE("regression on pooled draws recovers the dense coefficients") {
  // With the treatment contribution subtracted, least squares on pooled
  // draws estimates the outcome coefficients; their squared norm should
  // land near 18.
  std::vector<Eigen::MatrixXd> xs;
  std::vector<Eigen::VectorXd> ys;
  long rows = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const simulation::ScenarioDraw draw =
        simulation::generate_scenario(ScenarioId::S2, seed);
    xs.push_back(draw.dataset.covariates);
    ys.push_back(draw.dataset.outcome - 10.0 * draw.dataset.treatment);
    rows += draw.dataset.n();
  }
  Eigen::MatrixXd x(rows, simulation::kScenarioP);
  Eigen::VectorXd y(rows);
  long at = 0;
  for (std::size_t b = 0; b < xs.size(); ++b) {
    x.middleRows(at, xs[b].rows()) = xs[b];
    y.segment(at, ys[b].size()) = ys[b];
    at += xs[b].rows();
  }
  const glm::LinearFit fit = glm::fit_ols(x, y);
  CHECK(fit.coefficients.squaredNorm() == doctest::Approx(18.0).epsilon(0.06));
}

TEST_CASE("outcome coefficients exist only for linear outcome surfaces") {
  const Eigen::VectorXd s1 = simulation::scenario_beta(ScenarioId::S1);
  CHECK(s1[0] == 0.75);
  CHECK(s1[1] == 1.0);
  CHECK(s1[2] == 0.6);
  CHECK(s1[3] == -0.8);
  CHECK(s1[4] == -0.7);
  CHECK(s1.tail(295).norm() == 0.0);
  CHECK((simulation::scenario_beta(ScenarioId::A4) - s1).norm() == 0.0);
  CHECK(simulation::scenario_beta(ScenarioId::A1).norm() == 0.0);

  // 0.2, 0.3, then thirty-six +-0.15 pairs, then zeros.
  const Eigen::VectorXd s3 = simulation::scenario_beta(ScenarioId::S3);
  CHECK(s3[0] == 0.2);
  CHECK(s3[1] == 0.3);
  CHECK(s3[2] == 0.15);
  CHECK(s3[3] == -0.15);
  CHECK(s3[72] == 0.15);
  CHECK(s3[73] == -0.15);
  CHECK(s3.tail(226).norm() == 0.0);

  CHECK_THROWS_AS(simulation::scenario_beta(ScenarioId::S4), ValidationError);
  CHECK_THROWS_AS(simulation::scenario_beta(ScenarioId::S5), ValidationError);
  CHECK_THROWS_AS(simulation::scenario_beta(ScenarioId::A5), ValidationError);
}
