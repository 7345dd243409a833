#pragma once

// DSGD and FedAvg rounds under the four samplers, the Gaussian gradient
// oracle, and the step-size bounds from the convergence theorems.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ocs/error.hpp"
#include "ocs/protocol.hpp"
#include "ocs/random.hpp"
#include "ocs/sampling.hpp"
#include "ocs/tasks.hpp"

namespace ocs {

enum class SamplerKind { full, uniform, ocs, aocs };

inline const char* to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::full: return "full";
    case SamplerKind::uniform: return "uniform";
    case SamplerKind::ocs: return "ocs";
    case SamplerKind::aocs: return "aocs";
  }
  return "?";
}

inline SamplerKind parse_sampler(std::string_view s) {
  if (s == "full") return SamplerKind::full;
  if (s == "uniform") return SamplerKind::uniform;
  if (s == "ocs") return SamplerKind::ocs;
  if (s == "aocs") return SamplerKind::aocs;
  throw ValidationError("unknown sampler '" + std::string(s) + "'");
}

struct SamplingSpec {
  SamplerKind kind = SamplerKind::full;
  std::size_t m = 1;
  std::size_t j_max = 4;
  LedgerOptions ledger;
};

/// E xi = 0, E ||xi||^2 = M ||grad||^2 + sigma2.
struct NoiseContract {
  double M = 0.0;
  double sigma2 = 0.0;
};

/// grad f_i(x) plus isotropic Gaussian noise with per-coordinate variance
/// (M ||grad||^2 + sigma2) / d. No draws are taken when that variance is 0.
template <ClientTask Task>
Vector noisy_gradient(const Task& task, const Vector& x, const NoiseContract& noise, RandomStream& stream) {
  detail::require(noise.M >= 0.0 && noise.sigma2 >= 0.0, "noise parameters must be >= 0");
  Vector g = task.gradient(x);
  const double d = static_cast<double>(g.size());
  const double var = (noise.M * g.squaredNorm() + noise.sigma2) / d;
  if (var > 0.0) {
    const double sd = std::sqrt(var);
    for (Eigen::Index j = 0; j < g.size(); ++j) g(j) += sd * stream.normal();
  }
  return g;
}

struct ModelState {
  Vector x;
  std::uint64_t round = 0;
};

struct RoundMetrics {
  std::size_t sampled_count = 0;
  // Realized variance ratio against uniform sampling and the matching gamma;
  // empty for full participation.
  std::optional<double> alpha;
  std::optional<double> gamma;
};

struct RoundResult {
  ModelState state;
  RoundTranscript transcript;
  RoundMetrics metrics;
  Vector update_estimate;  // sum_{i in S} w_i / p_i U_i
  Vector update_mean;      // sum_i w_i U_i
};

namespace detail {

inline void validate(const SamplingSpec& spec, std::size_t n) {
  require(spec.m >= 1, "budget m must be >= 1");
  require(spec.m <= n, "budget m must not exceed n");
  require(spec.j_max >= 1, "j_max must be >= 1");
}

// Weighted updates in, transcript out. Probabilities depend only on the
// norms of `weighted`.
inline RoundTranscript sample_round(const SamplingSpec& spec, const std::vector<Vector>& weighted,
                                    const RoundStreams& streams) {
  const std::size_t n = weighted.size();
  std::vector<double> u(n);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = weighted[i].norm();
    if (!std::isfinite(u[i])) throw DivergenceError("non-finite client update");
  }
  const WeightedNormVector norms(std::move(u));
  switch (spec.kind) {
    case SamplerKind::full:
      return run_fixed_round(RoundMode::full, full_probabilities(n), streams, weighted, spec.ledger);
    case SamplerKind::uniform:
      return run_fixed_round(RoundMode::uniform, uniform_probabilities(n, spec.m), streams, weighted, spec.ledger);
    case SamplerKind::ocs:
      return run_ocs_round(norms, spec.m, streams, weighted, spec.ledger);
    case SamplerKind::aocs:
      return run_aocs_round(norms, spec.m, spec.j_max, streams, weighted, spec.ledger);
  }
  throw ValidationError("unknown sampler");
}

inline RoundMetrics round_metrics(const SamplingSpec& spec, const RoundTranscript& t,
                                  const std::vector<Vector>& weighted) {
  RoundMetrics m;
  m.sampled_count = t.selection.size();
  if (spec.kind != SamplerKind::full) {
    std::vector<double> u;
    for (const auto& v : weighted) u.push_back(v.norm());
    const auto f = variance_ratio(WeightedNormVector(std::move(u)), t.probabilities, spec.m);
    m.alpha = f.alpha;
    m.gamma = f.gamma;
  }
  return m;
}

inline Vector checked_step(const Vector& x, double step, const Vector& direction) {
  Vector next = x - step * direction;
  if (!next.allFinite()) throw DivergenceError("iterate became non-finite");
  return next;
}

}  // namespace detail

/// One round of x <- x - eta * sum_{i in S} (w_i / p_i) g_i. An empty S leaves
/// x unchanged.
template <ClientTask Task>
RoundResult dsgd_round(const ModelState& state, const Federation<Task>& fed, const SamplingSpec& spec, double eta,
                       const NoiseContract& noise, std::uint64_t seed) {
  detail::require(eta > 0.0 && std::isfinite(eta), "eta must be > 0");
  detail::validate(spec, fed.size());
  const RoundStreams streams(seed, state.round);
  const std::size_t n = fed.size();

  std::vector<Vector> weighted(n);
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rs = streams.client(i, Purpose::gradient_noise, 0);
    const Vector g = noisy_gradient(fed.client(i), state.x, noise, rs);
    if (!g.allFinite()) throw DivergenceError("non-finite gradient");
    weighted[i] = fed.weight(i) * g;
  }

  RoundResult out;
  out.transcript = detail::sample_round(spec, weighted, streams);
  out.metrics = detail::round_metrics(spec, out.transcript, weighted);
  out.update_estimate = out.transcript.aggregate_update;
  out.update_mean = Vector::Zero(state.x.size());
  for (const auto& v : weighted) out.update_mean += v;
  out.state = {detail::checked_step(state.x, eta, out.update_estimate), state.round + 1};
  return out;
}

/// R local steps per client, then x <- x - eta_g * sum_{i in S} (w_i / p_i) dy_i
/// with dy_i = x - y_{i,R}. Local iterates are kept as y_r = x - eta_l D_r,
/// D_r the running gradient sum, so dy_i = eta_l D_i and sampling runs on
/// w_i ||D_i|| (the same probabilities, since they are scale invariant).
template <ClientTask Task>
RoundResult fedavg_round(const ModelState& state, const Federation<Task>& fed, const SamplingSpec& spec,
                         std::size_t R, double eta_l, double eta_g, const NoiseContract& noise, std::uint64_t seed) {
  detail::require(R >= 1, "R must be >= 1");
  detail::require(eta_l > 0.0 && std::isfinite(eta_l) && eta_g > 0.0 && std::isfinite(eta_g),
                  "step sizes must be > 0");
  detail::validate(spec, fed.size());
  const RoundStreams streams(seed, state.round);
  const std::size_t n = fed.size();

  std::vector<Vector> weighted(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vector sum = Vector::Zero(state.x.size());
    Vector y = state.x;
    for (std::size_t r = 0; r < R; ++r) {
      RandomStream rs = streams.client(i, Purpose::gradient_noise, r);
      const Vector g = noisy_gradient(fed.client(i), y, noise, rs);
      if (!g.allFinite()) throw DivergenceError("non-finite gradient");
      sum += g;
      y = state.x - eta_l * sum;
    }
    weighted[i] = fed.weight(i) * sum;
  }

  RoundResult out;
  out.transcript = detail::sample_round(spec, weighted, streams);
  out.metrics = detail::round_metrics(spec, out.transcript, weighted);
  out.update_estimate = eta_l * out.transcript.aggregate_update;
  out.update_mean = Vector::Zero(state.x.size());
  for (const auto& v : weighted) out.update_mean += v;
  out.update_mean *= eta_l;
  out.state = {detail::checked_step(state.x, eta_g, out.update_estimate), state.round + 1};
  return out;
}

// ---------------------------------------------------------------------------
// Step-size bounds

enum class Theorem { dsgd_cvx, dsgd_ncvx, fedavg_cvx, fedavg_ncvx };

inline Theorem parse_theorem(std::string_view s) {
  if (s == "dsgd_cvx") return Theorem::dsgd_cvx;
  if (s == "dsgd_ncvx") return Theorem::dsgd_ncvx;
  if (s == "fedavg_cvx") return Theorem::fedavg_cvx;
  if (s == "fedavg_ncvx") return Theorem::fedavg_ncvx;
  throw ValidationError("unknown theorem tag '" + std::string(s) + "'");
}

struct TheoremConstants {
  double L = 1.0;
  double mu = 0.0;
  double W = 1.0;
  double M = 0.0;
  double R = 1.0;
  double sum_w2 = 1.0;
};

struct StepSizeCaps {
  double eta_cap = 0.0;                 // bound on eta (FedAvg: eta = R eta_l eta_g)
  std::optional<double> eta_g_floor;    // FedAvg only
};

/// dsgd_ncvx has no admissible range of its own; the value returned is the
/// threshold 2 gamma / ((1 + M) L) below which the descent coefficient stays
/// positive.
inline StepSizeCaps step_size_caps(Theorem theorem, const TheoremConstants& c, double gamma) {
  detail::require(c.L > 0.0 && std::isfinite(c.L), "L must be > 0");
  detail::require(c.W >= 0.0 && c.M >= 0.0, "W and M must be >= 0");
  detail::require(gamma > 0.0 && gamma <= 1.0 + 1e-12, "gamma must lie in (0, 1]");
  StepSizeCaps caps;
  switch (theorem) {
    case Theorem::dsgd_cvx:
      caps.eta_cap = gamma / ((1.0 + c.W * c.M) * c.L);
      break;
    case Theorem::dsgd_ncvx:
      caps.eta_cap = 2.0 * gamma / ((1.0 + c.M) * c.L);
      break;
    case Theorem::fedavg_cvx:
      detail::require(c.R >= 1.0 && c.sum_w2 > 0.0, "FedAvg bounds need R >= 1 and sum w^2 > 0");
      caps.eta_cap = 0.125 * std::min(1.0 / (c.L * (2.0 + c.M / c.R)), gamma / ((1.0 + c.W * (1.0 + c.M / c.R)) * c.L));
      caps.eta_g_floor = std::sqrt(gamma / c.sum_w2);
      break;
    case Theorem::fedavg_ncvx:
      detail::require(c.R >= 1.0 && c.sum_w2 > 0.0, "FedAvg bounds need R >= 1 and sum w^2 > 0");
      caps.eta_cap = 1.0 / (8.0 * c.L * (2.0 + c.M / c.R));
      caps.eta_g_floor = std::sqrt(5.0 * gamma / (4.0 * c.sum_w2));
      break;
  }
  return caps;
}

struct DsgdConvexTerms {
  double beta1 = 0.0;
  double beta2 = 0.0;

  /// Right-hand side of the one-step bound on E||x^{k+1} - x*||^2.
  double bound(double dist_sq, double mu, double eta, double gamma) const {
    return (1.0 - mu * eta) * dist_sq + eta * eta * (beta1 / gamma - beta2);
  }
};

template <ClientTask Task>
DsgdConvexTerms dsgd_convex_terms(const Federation<Task>& fed, const NoiseContract& noise) {
  DsgdConvexTerms t;
  for (std::size_t i = 0; i < fed.size(); ++i) {
    const double w2 = fed.weight(i) * fed.weight(i);
    t.beta1 += w2 * (2.0 * fed.L() * (1.0 + noise.M) * fed.Z()[i] + noise.sigma2);
    t.beta2 += 2.0 * fed.L() * w2 * fed.Z()[i];
  }
  return t;
}

}  // namespace ocs
