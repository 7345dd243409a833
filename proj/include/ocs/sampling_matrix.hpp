#pragma once

// Pairwise inclusion probabilities for arbitrary (not necessarily
// independent) samplings and the exact variance of the importance-weighted
// sum they induce.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ocs/error.hpp"
#include "ocs/sampling.hpp"

namespace ocs {

/// P_ij = Prob({i, j} subset of S) together with a certificate v such that
/// P - p p^T <= Diag(p_1 v_1, ..., p_n v_n).
class ProbabilityMatrix {
 public:
  ProbabilityMatrix(Eigen::MatrixXd entries, Eigen::VectorXd v)
      : entries_(std::move(entries)), v_(std::move(v)) {
    const auto n = entries_.rows();
    detail::require(n >= 1 && entries_.cols() == n, "probability matrix must be square");
    detail::require(v_.size() == n, "certificate length must match matrix size");
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < n; ++j) {
        const double e = entries_(i, j);
        detail::require(std::isfinite(e) && e >= -kProbabilityTolerance &&
                            e <= 1.0 + kProbabilityTolerance,
                        "matrix entries must lie in [0, 1]");
        detail::require(std::abs(e - entries_(j, i)) <= kProbabilityTolerance,
                        "probability matrix must be symmetric");
      }
    }
  }

  /// Independent sampling: P_ij = p_i p_j off the diagonal, v_i = 1 - p_i.
  static ProbabilityMatrix independent(const ProbabilityVector& p) {
    const auto n = static_cast<Eigen::Index>(p.size());
    Eigen::VectorXd pv(n);
    for (Eigen::Index i = 0; i < n; ++i) pv(i) = p[static_cast<std::size_t>(i)];
    Eigen::MatrixXd entries = pv * pv.transpose();
    entries.diagonal() = pv;
    return ProbabilityMatrix(std::move(entries), Eigen::VectorXd::Ones(n) - pv);
  }

  /// Build from an explicit distribution over subsets. `subsets[k]` lists the
  /// members of the k-th outcome, drawn with probability `weights[k]`. The
  /// certificate is the smallest diagonal v that satisfies the ordering,
  /// found by bisection on a common scale of the diagonal slack.
  static ProbabilityMatrix from_subset_distribution(std::size_t n,
                                                    const std::vector<std::vector<std::size_t>>& subsets,
                                                    std::span<const double> weights) {
    detail::require(subsets.size() == weights.size(), "one weight per subset required");
    const auto dim = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd entries = Eigen::MatrixXd::Zero(dim, dim);
    double total = 0.0;
    for (std::size_t k = 0; k < subsets.size(); ++k) {
      detail::require(weights[k] >= 0.0, "subset weights must be non-negative");
      total += weights[k];
      for (auto i : subsets[k]) {
        detail::require(i < n, "subset member out of range");
        for (auto j : subsets[k]) entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) += weights[k];
      }
    }
    detail::require(std::abs(total - 1.0) <= 1e-12, "subset weights must sum to 1");
    return ProbabilityMatrix(entries, minimal_certificate(entries));
  }

  std::size_t size() const noexcept { return static_cast<std::size_t>(entries_.rows()); }
  const Eigen::MatrixXd& entries() const noexcept { return entries_; }
  const Eigen::VectorXd& certificate() const noexcept { return v_; }
  Eigen::VectorXd probabilities() const { return entries_.diagonal(); }

  /// Checks P - p p^T <= Diag(p o v) by the smallest eigenvalue of the gap.
  bool certificate_valid(double tol = 1e-10) const {
    const Eigen::VectorXd p = probabilities();
    Eigen::MatrixXd gap = Eigen::MatrixXd(p.cwiseProduct(v_).asDiagonal()) -
                          (entries_ - p * p.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gap, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().minCoeff() >= -tol;
  }

 private:
  // v_i = (1 - p_i) * t, with t >= 1 the smallest common scale that works.
  // Not optimal per coordinate, but always a valid certificate.
  static Eigen::VectorXd minimal_certificate(const Eigen::MatrixXd& entries) {
    const Eigen::VectorXd p = entries.diagonal();
    const Eigen::MatrixXd cov = entries - p * p.transpose();
    const Eigen::VectorXd base = (Eigen::VectorXd::Ones(p.size()) - p).cwiseMax(1e-300);
    auto ok = [&](double t) {
      Eigen::MatrixXd gap = Eigen::MatrixXd(p.cwiseProduct(base * t).asDiagonal()) - cov;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gap, Eigen::EigenvaluesOnly);
      return solver.eigenvalues().minCoeff() >= -1e-12;
    };
    double lo = 1.0, hi = 1.0;
    while (!ok(hi)) {
      lo = hi;
      hi *= 2.0;
      detail::require(hi < 1e12, "could not certify the sampling");
    }
    if (ok(lo)) return base * lo;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (ok(mid) ? hi : lo) = mid;
    }
    return base * hi;
  }

  Eigen::MatrixXd entries_;
  Eigen::VectorXd v_;
};

namespace detail {

inline Eigen::MatrixXd scaled_columns(const ProbabilityMatrix& matrix,
                                      std::span<const Eigen::VectorXd> weighted) {
  const std::size_t n = matrix.size();
  require(weighted.size() == n, "vector count must match the number of clients");
  const auto d = weighted.front().size();
  Eigen::MatrixXd a(d, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    require(weighted[i].size() == d, "all vectors must share one dimension");
    const double p = matrix.entries()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    if (weighted[i].squaredNorm() == 0.0) {
      a.col(static_cast<Eigen::Index>(i)).setZero();
      continue;
    }
    require(p > 0.0, "client " + std::to_string(i) + " has a nonzero vector but zero probability");
    a.col(static_cast<Eigen::Index>(i)) = weighted[i] / p;
  }
  return a;
}

}  // namespace detail

/// Exact variance of sum_{i in S} U~_i / p_i for the sampling described by
/// `matrix`, where `weighted[i]` is U~_i = w_i zeta_i:
/// e^T ((P - p p^T) o A^T A) e with columns a_i = U~_i / p_i.
inline double general_sampling_variance(const ProbabilityMatrix& matrix,
                                        std::span<const Eigen::VectorXd> weighted) {
  const Eigen::MatrixXd a = detail::scaled_columns(matrix, weighted);
  const Eigen::VectorXd p = matrix.probabilities();
  const Eigen::MatrixXd cov = matrix.entries() - p * p.transpose();
  const Eigen::MatrixXd gram = a.transpose() * a;
  return std::max(0.0, cov.cwiseProduct(gram).sum());
}

/// Upper bound sum_i v_i / p_i ||U~_i||^2 implied by the certificate.
inline double certificate_bound(const ProbabilityMatrix& matrix,
                                std::span<const Eigen::VectorXd> weighted) {
  const Eigen::MatrixXd a = detail::scaled_columns(matrix, weighted);
  const Eigen::VectorXd p = matrix.probabilities();
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.cols(); ++i) {
    total += p(i) * matrix.certificate()(i) * a.col(i).squaredNorm();
  }
  return total;
}

}  // namespace ocs
