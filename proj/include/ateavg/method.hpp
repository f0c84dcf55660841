#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

#include "ateavg/errors.hpp"

namespace ateavg {

// The eight candidate ATE estimators.  Enum order is the tie-breaking
// ordinal used when trimming.
enum class MethodId {
  DoublePS,
  Debiasing,
  DRLasso,
  DRME,
  TMLE,
  TMLEScreen,
  DML,
  DMLPS,
};

inline constexpr std::array<MethodId, 8> kAllMethods = {
    MethodId::DoublePS, MethodId::Debiasing, MethodId::DRLasso,
    MethodId::DRME,     MethodId::TMLE,      MethodId::TMLEScreen,
    MethodId::DML,      MethodId::DMLPS,
};

// Stable names used in the CLI and CSV output.
const std::string& to_string(MethodId m);

// Inverse of to_string; throws ValidationError on an unknown name.
MethodId method_from_string(const std::string& name);

// One candidate estimator's result: point estimate, standard error, and
// free-form numeric diagnostics (selected-set sizes, clip counts, timings).
struct EstimatorOutput {
  MethodId method = MethodId::DoublePS;
  double theta_hat = 0.0;
  double sigma_hat = 0.0;
  std::map<std::string, double> diagnostics;
};

// Tuning shared by all estimators.  screen_cap = 0 means "auto": floor(n/10).
struct EstimatorSettings {
  int cv_folds = 10;
  int dml_folds = 5;
  double propensity_clip = 0.025;  // in (0, 0.5)
  int screen_cap = 0;
  double zeta = 0.5;
  int match_count = 1;
  std::uint64_t seed = 0;
};

// A method-level failure: the harness records it against the method instead
// of aborting the whole replication.
class EstimatorError : public std::runtime_error {
 public:
  EstimatorError(MethodId m, const std::string& what)
      : std::runtime_error(to_string(m) + ": " + what), method_(m) {}
  MethodId method() const { return method_; }

 private:
  MethodId method_;
};

}  // namespace ateavg
