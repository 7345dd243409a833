#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ocs {

// Bad input: malformed vectors, infeasible budgets, bad config.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A run produced non-finite iterates or gradients.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Iterative solver hit its cap. Carries the best point found so far.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> best, double best_value)
      : std::runtime_error(what), best_(std::move(best)), best_value_(best_value) {}

  const std::vector<double>& best() const noexcept { return best_; }
  double best_value() const noexcept { return best_value_; }

 private:
  std::vector<double> best_;
  double best_value_;
};

namespace detail {

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

}  // namespace detail
}  // namespace ocs
