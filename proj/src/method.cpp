#include "ateavg/method.hpp"

#include <vector>

namespace ateavg {

namespace {

const std::vector<std::string> kNames = {
    "double_ps", "debiasing", "dr_lasso", "drme",
    "tmle",      "tmle_screen", "dml",    "dml_ps",
};

}  // namespace

const std::string& to_string(MethodId m) {
  return kNames[static_cast<int>(m)];
}

MethodId method_from_string(const std::string& name) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (kNames[i] == name) return static_cast<MethodId>(i);
  throw ValidationError("unknown method name '" + name +
                        "'; expected one of: double_ps, debiasing, dr_lasso, "
                        "drme, tmle, tmle_screen, dml, dml_ps");
}

}  // namespace ateavg
