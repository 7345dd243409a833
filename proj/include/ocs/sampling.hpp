#pragma once

// Client sampling mathematics: optimal (closed-form) and approximate
// (iterative, aggregation-only) inclusion probabilities, independent
// sampling, and the variance of the resulting unbiased estimator.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ocs/error.hpp"
#include "ocs/random.hpp"

namespace ocs {

inline constexpr double kProbabilityTolerance = 1e-12;
inline constexpr double kBudgetTolerance = 1e-9;
// AOCS stops once the calibration factor is within this much of 1; without
// it, rounding can keep C at 1 + 2^-52 and burn the remaining iterations.
inline constexpr double kCalibrationTolerance = 1e-12;

/// Per-client norm mass u_i = w_i * ||U_i||. Non-empty, every entry >= 0.
class WeightedNormVector {
 public:
  WeightedNormVector() = default;

  explicit WeightedNormVector(std::vector<double> values) : values_(std::move(values)) {
    detail::require(!values_.empty(), "norm vector must be non-empty");
    for (std::size_t i = 0; i < values_.size(); ++i) {
      detail::require(std::isfinite(values_[i]) && values_[i] >= 0.0,
                      "norm " + std::to_string(i) + " must be finite and non-negative");
    }
  }

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  double sum() const { return std::accumulate(values_.begin(), values_.end(), 0.0); }
  bool all_zero() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return v == 0.0; });
  }
  std::size_t count_positive() const {
    return static_cast<std::size_t>(
        std::count_if(values_.begin(), values_.end(), [](double v) { return v > 0.0; }));
  }

 private:
  std::vector<double> values_;
};

namespace detail {

// Snap rounding noise back into [0, 1]. Values that are a hair above 1 come
// from (m + l - n) * u / S type arithmetic at the saturation boundary.
inline double clip_probability(double p) {
  if (p >= 1.0 - kProbabilityTolerance) return 1.0;
  if (p <= 0.0) return 0.0;
  return p;
}

}  // namespace detail

/// Inclusion probabilities p_i with the expected-participation budget m.
class ProbabilityVector {
 public:
  ProbabilityVector() = default;

  ProbabilityVector(std::vector<double> probs, std::size_t budget)
      : probs_(std::move(probs)), budget_(budget) {
    detail::require(budget_ >= 1, "budget m must be >= 1");
    detail::require(!probs_.empty(), "probability vector must be non-empty");
    double total = 0.0;
    for (std::size_t i = 0; i < probs_.size(); ++i) {
      double& p = probs_[i];
      detail::require(std::isfinite(p) && p >= -kProbabilityTolerance &&
                          p <= 1.0 + kProbabilityTolerance,
                      "probability " + std::to_string(i) + " outside [0, 1]");
      p = std::clamp(p, 0.0, 1.0);
      total += p;
    }
    detail::require(total <= static_cast<double>(budget_) + kBudgetTolerance,
                    "probabilities exceed the budget m");
  }

  std::size_t size() const noexcept { return probs_.size(); }
  std::size_t budget() const noexcept { return budget_; }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> values() const noexcept { return probs_; }
  double sum() const { return std::accumulate(probs_.begin(), probs_.end(), 0.0); }

 private:
  std::vector<double> probs_;
  std::size_t budget_ = 1;
};

/// Indices (ascending) of clients that passed their coin flip. May be empty.
struct ClientSelection {
  std::vector<std::size_t> included;

  std::size_t size() const noexcept { return included.size(); }
  bool empty() const noexcept { return included.empty(); }
  bool contains(std::size_t i) const {
    return std::binary_search(included.begin(), included.end(), i);
  }
  friend bool operator==(const ClientSelection&, const ClientSelection&) = default;
};

struct OcsResult {
  ProbabilityVector probabilities;
  // All norms were zero: nothing carries information this round.
  bool degenerate = false;
};

struct AocsResult {
  ProbabilityVector probabilities;
  std::size_t iterations_used = 0;
  bool degenerate = false;
};

namespace detail {

inline void validate_budget(const WeightedNormVector& norms, std::size_t m) {
  require(m >= 1, "budget m must be >= 1");
  require(norms.size() >= 1, "norm vector must be non-empty");
}

}  // namespace detail

/// Closed-form variance-minimizing probabilities under sum(p) <= m.
///
/// Sort norms ascending (ties by client index), take the largest l with
/// 0 < m + l - n <= (sum of the l smallest) / (l-th smallest), saturate the
/// n - l largest clients at p = 1 and spread the remaining m + l - n mass
/// proportionally to norm over the l smallest. A zero l-th smallest norm
/// satisfies the condition; 0/0 spreads as 0.
inline OcsResult ocs_probabilities(const WeightedNormVector& norms, std::size_t m) {
  detail::validate_budget(norms, m);
  const std::size_t n = norms.size();
  if (norms.all_zero()) return {ProbabilityVector(std::vector<double>(n, 0.0), m), true};
  if (m >= n) return {ProbabilityVector(std::vector<double>(n, 1.0), m), false};

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] < norms[b]; });

  std::vector<double> prefix(n);
  double running = 0.0;
  for (std::size_t pos = 0; pos < n; ++pos) {
    running += norms[order[pos]];
    prefix[pos] = running;
  }

  // l ranges over n-m+1 .. n; the lower end always qualifies.
  std::size_t l = n - m + 1;
  for (std::size_t cand = n; cand > n - m; --cand) {
    const double smallest_l = norms[order[cand - 1]];
    const double slack = static_cast<double>(m + cand - n);
    if (smallest_l == 0.0 || slack <= prefix[cand - 1] / smallest_l) {
      l = cand;
      break;
    }
  }

  const double mass = static_cast<double>(m + l - n);
  const double denom = prefix[l - 1];
  // Equal norms share the mass exactly, so equal inputs reproduce uniform
  // sampling bit for bit instead of through a rounded prefix sum.
  const bool level = norms[order[0]] == norms[order[l - 1]];
  std::vector<double> p(n, 1.0);
  for (std::size_t pos = 0; pos < l; ++pos) {
    const std::size_t i = order[pos];
    if (denom == 0.0) p[i] = 0.0;
    else if (level) p[i] = detail::clip_probability(mass / static_cast<double>(l));
    else p[i] = detail::clip_probability(mass * norms[i] / denom);
  }
  return {ProbabilityVector(std::move(p), m), false};
}

// Client- and master-side steps of the approximate scheme. The protocol
// simulation composes these through messages; aocs_probabilities composes
// them directly. Both therefore produce bit-identical probabilities.
namespace aocs_step {

inline double initial_probability(double norm, double norm_sum, std::size_t m) {
  return detail::clip_probability(std::min(static_cast<double>(m) * norm / norm_sum, 1.0));
}

struct Status {
  double unsaturated = 0.0;  // 1 if p < 1 else 0
  double probability = 0.0;  // p if p < 1 else 0
};

inline Status status(double p) { return p < 1.0 ? Status{1.0, p} : Status{0.0, 0.0}; }

// Master: C = (m - n + I) / P, or nothing when P = 0 (all unsaturated
// clients have zero norm, so there is no mass to rescale).
inline std::optional<double> calibration(double unsaturated, double prob_sum, std::size_t m,
                                         std::size_t n) {
  if (prob_sum == 0.0) return std::nullopt;
  return (static_cast<double>(m) - static_cast<double>(n) + unsaturated) / prob_sum;
}

inline double recalibrate(double p, double c) {
  return p < 1.0 ? detail::clip_probability(std::min(c * p, 1.0)) : p;
}

inline bool converged(double c) { return c <= 1.0 + kCalibrationTolerance; }

}  // namespace aocs_step

/// Iterative rescaling that needs only sums across clients. Starts from
/// p_i = min(m u_i / sum u, 1) and for up to j_max rounds rescales the
/// unsaturated clients by C = (m - n + I) / P, stopping once C <= 1.
/// iterations_used counts status-report rounds, including one that stops
/// on the P = 0 guard.
inline AocsResult aocs_probabilities(const WeightedNormVector& norms, std::size_t m,
                                     std::size_t j_max) {
  detail::validate_budget(norms, m);
  detail::require(j_max >= 1, "j_max must be >= 1");
  const std::size_t n = norms.size();
  if (norms.all_zero()) return {ProbabilityVector(std::vector<double>(n, 0.0), m), 0, true};
  if (m >= n) return {ProbabilityVector(std::vector<double>(n, 1.0), m), 0, false};

  const double norm_sum = norms.sum();
  std::vector<double> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = aocs_step::initial_probability(norms[i], norm_sum, m);

  std::size_t iterations = 0;
  for (std::size_t j = 0; j < j_max; ++j) {
    ++iterations;
    double unsaturated = 0.0;
    double prob_sum = 0.0;
    for (double pi : p) {
      const auto s = aocs_step::status(pi);
      unsaturated += s.unsaturated;
      prob_sum += s.probability;
    }
    const auto c = aocs_step::calibration(unsaturated, prob_sum, m, n);
    if (!c) break;
    for (double& pi : p) pi = aocs_step::recalibrate(pi, *c);
    if (aocs_step::converged(*c)) break;
  }
  return {ProbabilityVector(std::move(p), m), iterations, false};
}

/// Independent uniform sampling: every client at m / n.
inline ProbabilityVector uniform_probabilities(std::size_t n, std::size_t m) {
  detail::require(n >= 1 && m >= 1, "n and m must be >= 1");
  detail::require(m <= n, "uniform sampling requires m <= n");
  return ProbabilityVector(std::vector<double>(n, static_cast<double>(m) / static_cast<double>(n)),
                           m);
}

/// Full participation expressed as a probability vector.
inline ProbabilityVector full_probabilities(std::size_t n) {
  detail::require(n >= 1, "n must be >= 1");
  return ProbabilityVector(std::vector<double>(n, 1.0), n);
}

inline bool coin_flip(double p, RandomStream& stream) {
  // One draw per client regardless of p keeps streams aligned across samplers.
  const double draw = stream.uniform();
  return draw < p;
}

/// Include client i independently with probability p_i, drawing one uniform
/// per client in index order.
inline ClientSelection sample_independent(const ProbabilityVector& p, RandomStream& stream) {
  ClientSelection selection;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (coin_flip(p[i], stream)) selection.included.push_back(i);
  }
  return selection;
}

/// E||sum_{i in S} U~_i / p_i - sum_i U~_i||^2 for independent sampling:
/// sum_i (1 - p_i) / p_i * u_i^2. Zero-norm terms contribute nothing.
inline double estimator_variance(const WeightedNormVector& norms, const ProbabilityVector& p) {
  detail::require(norms.size() == p.size(), "norms and probabilities differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < norms.size(); ++i) {
    const double u = norms[i];
    if (u == 0.0) continue;
    detail::require(p[i] > 0.0,
                    "client " + std::to_string(i) + " has positive norm but zero probability");
    total += (1.0 - p[i]) / p[i] * u * u;
  }
  return total;
}

struct ImprovementFactors {
  double alpha = 0.0;  // OCS variance / uniform variance, in [0, 1]
  double gamma = 1.0;  // m / (alpha (n - m) + m), in [m/n, 1]
};

inline ImprovementFactors improvement_factors(const WeightedNormVector& norms, std::size_t m) {
  detail::validate_budget(norms, m);
  const std::size_t n = norms.size();
  detail::require(m <= n, "improvement factors require m <= n");
  ImprovementFactors out;
  const double uniform = estimator_variance(norms, uniform_probabilities(n, m));
  if (uniform > 0.0) {
    const double optimal = estimator_variance(norms, ocs_probabilities(norms, m).probabilities);
    out.alpha = std::clamp(optimal / uniform, 0.0, 1.0);
  }
  const double md = static_cast<double>(m);
  out.gamma = md / (out.alpha * static_cast<double>(n - m) + md);
  return out;
}

/// The same two factors for an arbitrary probability vector p: its variance
/// relative to uniform sampling with budget m. Not clamped, so p worse than
/// uniform gives alpha > 1.
inline ImprovementFactors variance_ratio(const WeightedNormVector& norms, const ProbabilityVector& p, std::size_t m) {
  detail::validate_budget(norms, m);
  const std::size_t n = norms.size();
  detail::require(m <= n, "improvement factors require m <= n");
  ImprovementFactors out;
  const double uniform = estimator_variance(norms, uniform_probabilities(n, m));
  if (uniform > 0.0) out.alpha = estimator_variance(norms, p) / uniform;
  const double md = static_cast<double>(m);
  out.gamma = md / (out.alpha * static_cast<double>(n - m) + md);
  return out;
}

}  // namespace ocs
