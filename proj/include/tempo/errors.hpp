#ifndef TEMPO_ERRORS_HPP_
#define TEMPO_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace tempo {

// Invalid user-supplied configuration. CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure (non-finite gradient, degenerate normalization).
// CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// A caller broke an API contract (shape mismatch, wrong entry point,
// sealed-data access). Always a bug in the calling code, never user input.
class ContractViolation : public std::logic_error {
 public:
  explicit ContractViolation(const std::string& what) : std::logic_error(what) {}
};

}  // namespace tempo

#endif  // TEMPO_ERRORS_HPP_
