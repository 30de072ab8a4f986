#pragma once

#include <stdexcept>
#include <string>

namespace driftlab {

// Each error family maps onto one CLI exit code (see tools/driftlab.cpp).

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or divergence; `step` is the iteration at which it was detected.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, long step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

class StageOrderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ProvenanceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace driftlab
