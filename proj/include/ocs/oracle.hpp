#pragma once

// Numerical reference for the optimal probabilities: minimizes
// sum_i (1 - p_i) / p_i * u_i^2 over {0 <= p <= 1, sum p <= m} by
// diagonally scaled projected gradient descent from random feasible starts. It
// knows nothing about the closed form, which is the point.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "ocs/error.hpp"
#include "ocs/random.hpp"
#include "ocs/sampling.hpp"

namespace ocs {

struct BruteForceOptions {
  std::size_t restarts = 20;
  std::size_t max_iterations = 5000;
  double tolerance = 1e-12;     // relative objective change that counts as stalled
  std::size_t patience = 3;     // consecutive stalled iterations before stopping
  double floor = 1e-12;         // lower bound on p for positive-norm clients
  std::uint64_t seed = 0x0c5;
};

struct BruteForceResult {
  ProbabilityVector probabilities;
  double objective = 0.0;
  std::size_t iterations = 0;   // summed over restarts
};

namespace detail {

struct OracleProblem {
  std::vector<double> sq;  // u_i^2 for positive-norm clients
  double budget;
  double floor;

  double objective(const std::vector<double>& p) const {
    double f = 0.0;
    for (std::size_t i = 0; i < sq.size(); ++i) f += sq[i] * (1.0 / p[i] - 1.0);
    return f;
  }

  void gradient(const std::vector<double>& p, std::vector<double>& g) const {
    for (std::size_t i = 0; i < sq.size(); ++i) g[i] = -sq[i] / (p[i] * p[i]);
  }

  // Projection onto {floor <= p <= 1, sum p <= budget} in the norm
  // sum_i metric_i (p_i - y_i)^2: p_i = clamp(y_i - tau / metric_i) with the
  // multiplier tau >= 0 found by bisection.
  void project(std::vector<double>& y, const std::vector<double>& metric) const {
    auto shifted_sum = [&](double tau) {
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += std::clamp(y[i] - tau / metric[i], floor, 1.0);
      return s;
    };
    double tau = 0.0;
    if (shifted_sum(0.0) > budget) {
      double lo = 0.0, hi = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) hi = std::max(hi, metric[i] * (y[i] - floor));
      for (int it = 0; it < 300; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        (shifted_sum(mid) > budget ? lo : hi) = mid;
      }
      tau = hi;
    }
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::clamp(y[i] - tau / metric[i], floor, 1.0);
  }
};

struct OracleRun {
  std::vector<double> p;
  double value;
  std::size_t iterations;
  bool converged;
};

// Scaled projected gradient: the metric is the diagonal of the Hessian
// 2 u_i^2 / p_i^3, which for this separable objective is the whole Hessian.
// Armijo backtracking along the projection arc.
inline OracleRun oracle_descent(const OracleProblem& prob, std::vector<double> start,
                                const BruteForceOptions& opt) {
  const std::size_t k = prob.sq.size();
  std::vector<double> metric(k, 1.0);
  prob.project(start, metric);
  std::vector<double> x = std::move(start), g(k), z(k);
  double fx = prob.objective(x);

  std::size_t stalled = 0;
  for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
    prob.gradient(x, g);
    for (std::size_t i = 0; i < k; ++i) metric[i] = 2.0 * prob.sq[i] / (x[i] * x[i] * x[i]);

    double step = 1.0;
    double fz = fx;
    bool accepted = false;
    for (int bt = 0; bt < 60; ++bt, step *= 0.5) {
      for (std::size_t i = 0; i < k; ++i) z[i] = x[i] - step * g[i] / metric[i];
      prob.project(z, metric);
      double decrease = 0.0;
      for (std::size_t i = 0; i < k; ++i) decrease += g[i] * (z[i] - x[i]);
      fz = prob.objective(z);
      if (fz <= fx + 1e-4 * decrease) {
        accepted = true;
        break;
      }
    }
    if (!accepted || fz >= fx) {
      // No further descent along the projection arc: first-order stationary
      // up to rounding.
      return {x, fx, it, true};
    }
    const double change = fx - fz;
    x = z;
    const double previous = fx;
    fx = fz;
    stalled = change <= opt.tolerance * std::max(std::abs(previous), 1e-300) ? stalled + 1 : 0;
    if (stalled >= opt.patience || fx == 0.0) return {x, fx, it, true};
  }
  return {x, fx, opt.max_iterations, false};
}

}  // namespace detail

/// Projected-gradient reference minimizer of the independent-sampling
/// variance. Throws ConvergenceError (with the best point) if no restart
/// stalls within the iteration cap.
inline BruteForceResult brute_force_probabilities(const WeightedNormVector& norms, std::size_t m,
                                                  const BruteForceOptions& opt = {}) {
  detail::require(m >= 1, "budget m must be >= 1");
  const std::size_t n = norms.size();

  std::vector<std::size_t> active;
  detail::OracleProblem prob{{}, static_cast<double>(m), opt.floor};
  for (std::size_t i = 0; i < n; ++i) {
    if (norms[i] > 0.0) {
      active.push_back(i);
      prob.sq.push_back(norms[i] * norms[i]);
    }
  }

  auto expand = [&](const std::vector<double>& sub) {
    std::vector<double> full(n, 0.0);
    for (std::size_t a = 0; a < active.size(); ++a) full[active[a]] = sub[a];
    return full;
  };

  if (active.size() <= m) {
    return {ProbabilityVector(expand(std::vector<double>(active.size(), 1.0)), m), 0.0, 0};
  }

  RandomStream stream = RandomStream::keyed({opt.seed, static_cast<std::uint64_t>(Purpose::oracle)});
  detail::OracleRun best{{}, std::numeric_limits<double>::infinity(), 0, false};
  bool any_converged = false;
  std::size_t total_iterations = 0;
  for (std::size_t r = 0; r < opt.restarts; ++r) {
    std::vector<double> start(active.size());
    for (double& v : start) v = stream.uniform(opt.floor, 1.0);
    auto run = detail::oracle_descent(prob, std::move(start), opt);
    total_iterations += run.iterations;
    any_converged = any_converged || run.converged;
    if (run.value < best.value) best = std::move(run);
  }

  if (!any_converged) {
    throw ConvergenceError("projected gradient did not converge", expand(best.p), best.value);
  }
  return {ProbabilityVector(expand(best.p), m), best.value, total_iterations};
}

}  // namespace ocs
