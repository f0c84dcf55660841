#pragma once

#include <stdexcept>
#include <string>

namespace ateavg {

// Raised by ingestion and by type invariant checks (bad CSV cell, empty arm, ...).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised by numeric solvers: non-convergence, separation, rank deficiency.
class SolverError : public std::runtime_error {
 public:
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ateavg
