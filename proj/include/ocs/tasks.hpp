#pragma once

// Synthetic federations whose constants (L, mu, x*, f*, Z_i) are known to
// solver precision. Objective: f(x) = sum_i w_i f_i(x).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ocs/error.hpp"
#include "ocs/random.hpp"

namespace ocs {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

template <class T>
concept ClientTask = requires(const T& t, const Vector& x) {
  { t.dimension() } -> std::convertible_to<Eigen::Index>;
  { t.value(x) } -> std::convertible_to<double>;
  { t.gradient(x) } -> std::convertible_to<Vector>;
  { t.smoothness() } -> std::convertible_to<double>;
};

namespace detail {

inline void require_finite(const Matrix& m, const char* what) {
  require(m.allFinite(), std::string(what) + " must be finite");
}

inline double max_eigenvalue(const Matrix& sym) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(sym, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
}

inline double min_eigenvalue(const Matrix& sym) {
  return Eigen::SelfAdjointEigenSolver<Matrix>(sym, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

}  // namespace detail

/// f_i(x) = 1/2 (x - b)^T A (x - b) + c with A symmetric positive definite.
class QuadraticClientTask {
 public:
  QuadraticClientTask(Matrix a, Vector b, double c = 0.0) : a_(std::move(a)), b_(std::move(b)), c_(c) {
    detail::require(a_.rows() == a_.cols() && a_.rows() == b_.size() && b_.size() >= 1,
                    "quadratic: A must be d x d and b a d-vector");
    detail::require_finite(a_, "quadratic A");
    detail::require_finite(b_, "quadratic b");
    detail::require(std::isfinite(c_), "quadratic c must be finite");
    detail::require((a_ - a_.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + a_.cwiseAbs().maxCoeff()),
                    "quadratic A must be symmetric");
    a_ = 0.5 * (a_ + a_.transpose());
    const Vector eig = Eigen::SelfAdjointEigenSolver<Matrix>(a_, Eigen::EigenvaluesOnly).eigenvalues();
    detail::require(eig.minCoeff() > 0.0, "quadratic A must be positive definite");
    l_ = eig.maxCoeff();
    mu_ = eig.minCoeff();
  }

  /// A = Q diag(spectrum) Q^T; L and mu are read off the spectrum.
  static QuadraticClientTask from_spectrum(const Matrix& q, const Vector& spectrum, Vector b, double c = 0.0) {
    detail::require(spectrum.size() == q.rows() && (spectrum.array() > 0.0).all(),
                    "spectrum must be positive and match Q");
    Matrix a = q * spectrum.asDiagonal() * q.transpose();
    QuadraticClientTask t(0.5 * (a + a.transpose()), std::move(b), c);
    t.l_ = spectrum.maxCoeff();
    t.mu_ = spectrum.minCoeff();
    return t;
  }

  Eigen::Index dimension() const noexcept { return b_.size(); }
  const Matrix& curvature() const noexcept { return a_; }
  const Vector& center() const noexcept { return b_; }
  double offset() const noexcept { return c_; }
  double smoothness() const noexcept { return l_; }
  double strong_convexity() const noexcept { return mu_; }
  double minimum() const noexcept { return c_; }

  double value(const Vector& x) const {
    const Vector r = x - b_;
    return 0.5 * r.dot(a_ * r) + c_;
  }
  Vector gradient(const Vector& x) const { return a_ * (x - b_); }
  Matrix hessian(const Vector&) const { return a_; }

 private:
  Matrix a_;
  Vector b_;
  double c_;
  double l_ = 0.0;
  double mu_ = 0.0;
};

/// Regularized logistic loss with labels in {-1, +1}:
/// f_i(x) = (1/s) sum_j log(1 + exp(-y_j <a_j, x>)) + lambda/2 ||x||^2.
class LogisticClientTask {
 public:
  LogisticClientTask(Matrix features, Vector labels, double lambda)
      : x_(std::move(features)), y_(std::move(labels)), lambda_(lambda) {
    detail::require(x_.rows() >= 1 && x_.cols() >= 1, "logistic: need at least one sample and feature");
    detail::require(y_.size() == x_.rows(), "logistic: one label per sample");
    detail::require_finite(x_, "logistic features");
    detail::require((y_.array() == 1.0 || y_.array() == -1.0).all(), "logistic labels must be +-1");
    detail::require(std::isfinite(lambda_) && lambda_ >= 0.0, "logistic lambda must be >= 0");
    const double s = static_cast<double>(x_.rows());
    l_ = lambda_ + detail::max_eigenvalue(x_.transpose() * x_) / (4.0 * s);
  }

  Eigen::Index dimension() const noexcept { return x_.cols(); }
  Eigen::Index samples() const noexcept { return x_.rows(); }
  const Matrix& features() const noexcept { return x_; }
  const Vector& labels() const noexcept { return y_; }
  double lambda() const noexcept { return lambda_; }
  double smoothness() const noexcept { return l_; }

  double value(const Vector& w) const {
    const Vector z = y_.cwiseProduct(x_ * w);
    double loss = 0.0;
    for (Eigen::Index j = 0; j < z.size(); ++j) loss += softplus(-z(j));
    return loss / static_cast<double>(samples()) + 0.5 * lambda_ * w.squaredNorm();
  }

  Vector gradient(const Vector& w) const {
    const Vector z = y_.cwiseProduct(x_ * w);
    Vector coef(z.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) coef(j) = -y_(j) * sigmoid(-z(j));
    return x_.transpose() * coef / static_cast<double>(samples()) + lambda_ * w;
  }

  Matrix hessian(const Vector& w) const {
    const Vector z = x_ * w;
    Vector d(z.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      const double s = sigmoid(z(j));
      d(j) = s * (1.0 - s);
    }
    Matrix h = x_.transpose() * d.asDiagonal() * x_ / static_cast<double>(samples());
    h.diagonal().array() += lambda_;
    return h;
  }

 private:
  static double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }
  static double sigmoid(double t) {
    if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
  }

  Matrix x_;
  Vector y_;
  double lambda_;
  double l_ = 0.0;
};

struct ReferenceSolution {
  Vector x_star;
  double mu = 0.0;
  std::vector<double> client_minima;  // f_i*
};

namespace detail {

// Damped Newton on sum_i w_i f_i to ||grad|| < tol.
template <class Task>
Vector newton_minimize(std::span<const Task> tasks, std::span<const double> w, Vector x, double tol,
                       const char* what, int max_iterations = 200) {
  auto eval = [&](const Vector& p) {
    double f = 0.0;
    for (std::size_t i = 0; i < tasks.size(); ++i) f += w[i] * tasks[i].value(p);
    return f;
  };
  double fx = eval(x);
  for (int it = 0; it < max_iterations; ++it) {
    Vector g = Vector::Zero(x.size());
    Matrix h = Matrix::Zero(x.size(), x.size());
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (w[i] == 0.0) continue;
      g += w[i] * tasks[i].gradient(x);
      h += w[i] * tasks[i].hessian(x);
    }
    if (g.norm() < tol) return x;
    const Vector step = h.ldlt().solve(g);
    double t = 1.0;
    Vector next = x - step;
    double fn = eval(next);
    // Close to the optimum the decrease drops below the rounding of f, so
    // line search only runs while the gradient is still large.
    while (g.norm() > 1e-6 && !(fn <= fx - 1e-4 * t * g.dot(step)) && t > 1e-12) {
      t *= 0.5;
      next = x - t * step;
      fn = eval(next);
    }
    if (t <= 1e-12 || !next.allFinite()) break;
    x = std::move(next);
    fx = fn;
  }
  Vector g = Vector::Zero(x.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) g += w[i] * tasks[i].gradient(x);
  if (g.norm() < tol) return x;
  throw ConvergenceError(std::string(what) + ": reference solve did not reach gradient norm tolerance",
                         std::vector<double>(x.data(), x.data() + x.size()), g.norm());
}

}  // namespace detail

inline ReferenceSolution reference_solution(std::span<const QuadraticClientTask> tasks, std::span<const double> w) {
  const Eigen::Index d = tasks.front().dimension();
  Matrix h = Matrix::Zero(d, d);
  Vector rhs = Vector::Zero(d);
  bool common_center = true;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    h += w[i] * tasks[i].curvature();
    rhs += w[i] * (tasks[i].curvature() * tasks[i].center());
    common_center = common_center && tasks[i].center() == tasks.front().center();
  }
  ReferenceSolution ref;
  // With one shared center that point is every f_i's minimizer; skip the
  // solve so Z_i comes out as exactly zero.
  ref.x_star = common_center ? tasks.front().center() : Vector(h.llt().solve(rhs));
  ref.mu = detail::min_eigenvalue(h);
  for (const auto& t : tasks) ref.client_minima.push_back(t.minimum());
  return ref;
}

inline ReferenceSolution reference_solution(std::span<const LogisticClientTask> tasks, std::span<const double> w) {
  constexpr double tol = 1e-10;
  const Eigen::Index d = tasks.front().dimension();
  ReferenceSolution ref;
  ref.x_star = detail::newton_minimize(tasks, w, Vector::Zero(d), tol, "logistic federation");
  double lambda = tasks.front().lambda();
  for (const auto& t : tasks) lambda = std::min(lambda, t.lambda());
  ref.mu = lambda;
  for (const auto& t : tasks) {
    const double one = 1.0;
    const Vector xi = detail::newton_minimize(std::span<const LogisticClientTask>(&t, 1), std::span<const double>(&one, 1),
                                              ref.x_star, tol, "logistic client");
    ref.client_minima.push_back(t.value(xi));
  }
  return ref;
}

struct ExactMetrics {
  double suboptimality = 0.0;  // f(x) - f*
  double dist_sq = 0.0;        // ||x - x*||^2
  std::vector<Vector> client_gradients;
  double dispersion = 0.0;     // sum_i w_i ||grad f_i(x) - grad f(x)||^2
};

/// Immutable after construction.
template <ClientTask Task>
class Federation {
 public:
  using task_type = Task;

  Federation(std::vector<Task> clients, std::vector<double> weights)
      : clients_(std::move(clients)), weights_(std::move(weights)) {
    detail::require(!clients_.empty(), "federation needs at least one client");
    detail::require(weights_.size() == clients_.size(), "one weight per client");
    const Eigen::Index d = clients_.front().dimension();
    for (const auto& c : clients_) detail::require(c.dimension() == d, "all clients must share one dimension");
    double total = 0.0;
    for (double w : weights_) {
      detail::require(std::isfinite(w) && w >= 0.0, "weights must be finite and >= 0");
      total += w;
    }
    detail::require(std::abs(total - 1.0) <= 1e-12, "weights must sum to 1");

    auto ref = reference_solution(std::span<const Task>(clients_), std::span<const double>(weights_));
    x_star_ = std::move(ref.x_star);
    mu_ = ref.mu;
    f_star_ = value(x_star_);
    for (std::size_t i = 0; i < clients_.size(); ++i) {
      l_ = std::max(l_, clients_[i].smoothness());
      z_.push_back(std::max(0.0, clients_[i].value(x_star_) - ref.client_minima[i]));
    }
    w_max_ = *std::max_element(weights_.begin(), weights_.end());
    for (double w : weights_) sum_w2_ += w * w;
  }

  std::size_t size() const noexcept { return clients_.size(); }
  Eigen::Index dimension() const noexcept { return clients_.front().dimension(); }
  const std::vector<Task>& clients() const noexcept { return clients_; }
  const Task& client(std::size_t i) const { return clients_.at(i); }
  const std::vector<double>& weights() const noexcept { return weights_; }
  double weight(std::size_t i) const { return weights_.at(i); }

  double L() const noexcept { return l_; }
  double mu() const noexcept { return mu_; }
  const Vector& x_star() const noexcept { return x_star_; }
  double f_star() const noexcept { return f_star_; }
  const std::vector<double>& Z() const noexcept { return z_; }
  double W() const noexcept { return w_max_; }
  double sum_w2() const noexcept { return sum_w2_; }

  double value(const Vector& x) const {
    double f = 0.0;
    for (std::size_t i = 0; i < clients_.size(); ++i) f += weights_[i] * clients_[i].value(x);
    return f;
  }

  Vector gradient(const Vector& x) const {
    Vector g = Vector::Zero(dimension());
    for (std::size_t i = 0; i < clients_.size(); ++i) g += weights_[i] * clients_[i].gradient(x);
    return g;
  }

  /// Weighted gradient dispersion at x.
  double dispersion(const Vector& x) const { return metrics(x).dispersion; }

  ExactMetrics metrics(const Vector& x) const {
    detail::require(x.size() == dimension(), "point has the wrong dimension");
    ExactMetrics m;
    m.suboptimality = value(x) - f_star_;
    m.dist_sq = (x - x_star_).squaredNorm();
    for (const auto& c : clients_) m.client_gradients.push_back(c.gradient(x));
    // Pairwise form of sum_i w_i ||g_i - g||^2 (weights sum to one): exactly
    // zero when all gradients coincide.
    const auto& g = m.client_gradients;
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = i + 1; j < g.size(); ++j) m.dispersion += weights_[i] * weights_[j] * (g[i] - g[j]).squaredNorm();
    return m;
  }

 private:
  std::vector<Task> clients_;
  std::vector<double> weights_;
  Vector x_star_;
  double mu_ = 0.0;
  double l_ = 0.0;
  double f_star_ = 0.0;
  std::vector<double> z_;
  double w_max_ = 0.0;
  double sum_w2_ = 0.0;
};

using QuadraticFederation = Federation<QuadraticClientTask>;
using LogisticFederation = Federation<LogisticClientTask>;

template <ClientTask Task>
ExactMetrics exact_metrics(const Federation<Task>& federation, const Vector& x) {
  return federation.metrics(x);
}

// ---------------------------------------------------------------------------
// Generators

enum class WeightScheme { uniform, proportional_lognormal };

struct QuadraticOptions {
  double mu0 = 0.1;
  double L0 = 10.0;
  bool shared_curvature = false;  // one A for every client
  double weight_sigma = 1.0;      // log-scale spread of lognormal weights
  double center_scale = 1.0;      // multiplies every b_i
};

namespace detail {

inline Vector gaussian_vector(RandomStream& rng, Eigen::Index d) {
  Vector v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = rng.normal();
  return v;
}

inline Matrix random_orthogonal(RandomStream& rng, Eigen::Index d) {
  Matrix g(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ();
}

inline std::vector<double> normalized(std::vector<double> w) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;
  return w;
}

inline std::vector<double> draw_weights(WeightScheme scheme, std::size_t n, RandomStream& rng, double sigma) {
  std::vector<double> w(n, 1.0);
  if (scheme == WeightScheme::proportional_lognormal)
    for (double& v : w) v = std::exp(sigma * rng.normal());
  return normalized(std::move(w));
}

}  // namespace detail

/// A_i = Q_i diag(lambda) Q_i^T with lambda log-uniform in [mu0, L0];
/// b_i = s (b_bar + heterogeneity * delta_i), b_bar and delta_i standard
/// normal, s = center_scale; c_i = 0.
inline QuadraticFederation make_quadratic_federation(std::size_t n, Eigen::Index d, double heterogeneity,
                                                     WeightScheme scheme, std::uint64_t seed,
                                                     const QuadraticOptions& opt = {}) {
  detail::require(n >= 1 && d >= 1, "n and d must be >= 1");
  detail::require(std::isfinite(heterogeneity) && heterogeneity >= 0.0, "heterogeneity must be >= 0");
  detail::require(opt.mu0 > 0.0 && opt.L0 >= opt.mu0, "need 0 < mu0 <= L0");
  detail::require(std::isfinite(opt.weight_sigma) && opt.weight_sigma >= 0.0, "weight_sigma must be >= 0");
  detail::require(std::isfinite(opt.center_scale) && opt.center_scale > 0.0, "center_scale must be > 0");
  RandomStream center_rng = RandomStream::keyed({seed, static_cast<std::uint64_t>(Purpose::task), 0});
  const Vector b_bar = detail::gaussian_vector(center_rng, d);

  auto curvature = [&](RandomStream& rng) {
    const Matrix q = detail::random_orthogonal(rng, d);
    Vector spectrum(d);
    const double lo = std::log(opt.mu0), hi = std::log(opt.L0);
    for (Eigen::Index j = 0; j < d; ++j) spectrum(j) = std::exp(rng.uniform(lo, hi));
    return std::pair{q, spectrum};
  };
  RandomStream shared_rng = RandomStream::keyed({seed, static_cast<std::uint64_t>(Purpose::task), 1});
  const auto shared = curvature(shared_rng);

  std::vector<QuadraticClientTask> clients;
  clients.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rng = RandomStream::keyed({seed, static_cast<std::uint64_t>(Purpose::task), 2, i});
    const auto [q, spectrum] = opt.shared_curvature ? shared : curvature(rng);
    Vector b = b_bar;
    if (heterogeneity > 0.0) b += heterogeneity * detail::gaussian_vector(rng, d);
    b *= opt.center_scale;
    clients.push_back(QuadraticClientTask::from_spectrum(q, spectrum, std::move(b)));
  }
  RandomStream weight_rng = RandomStream::keyed({seed, static_cast<std::uint64_t>(Purpose::weights)});
  return QuadraticFederation(std::move(clients), detail::draw_weights(scheme, n, weight_rng, opt.weight_sigma));
}

struct LogisticOptions {
  double lambda = 0.1;
  double feature_shift = 1.0;  // scale of the per-client feature mean offset
  double label_noise = 0.1;    // probability of flipping a label
};

/// Client i draws features around its own random mean; labels follow a shared
/// linear rule with random flips. Weights are proportional to sample counts.
inline LogisticFederation make_logistic_federation(std::size_t n, Eigen::Index d,
                                                   const std::vector<std::size_t>& samples_per_client,
                                                   std::uint64_t seed, const LogisticOptions& opt = {}) {
  detail::require(n >= 1 && d >= 1, "n and d must be >= 1");
  detail::require(samples_per_client.size() == n, "need one sample count per client");
  for (auto s : samples_per_client) detail::require(s >= 1, "sample counts must be >= 1");
  detail::require(opt.lambda >= 0.0 && opt.label_noise >= 0.0 && opt.label_noise <= 1.0,
                  "invalid logistic options");
  RandomStream truth_rng = RandomStream::keyed({seed, static_cast<std::uint64_t>(Purpose::task), 0});
  const Vector truth = detail::gaussian_vector(truth_rng, d);

  std::vector<LogisticClientTask> clients;
  std::vector<double> counts;
  for (std::size_t i = 0; i < n; ++i) {
    RandomStream rng = RandomStream::keyed({seed, static_cast<std::uint64_t>(Purpose::task), 2, i});
    const Vector shift = opt.feature_shift * detail::gaussian_vector(rng, d);
    const auto s = static_cast<Eigen::Index>(samples_per_client[i]);
    Matrix x(s, d);
    Vector y(s);
    for (Eigen::Index j = 0; j < s; ++j) {
      x.row(j) = (shift + detail::gaussian_vector(rng, d)).transpose();
      double label = x.row(j).dot(truth) >= 0.0 ? 1.0 : -1.0;
      if (rng.uniform() < opt.label_noise) label = -label;
      y(j) = label;
    }
    clients.emplace_back(std::move(x), std::move(y), opt.lambda);
    counts.push_back(static_cast<double>(samples_per_client[i]));
  }
  return LogisticFederation(std::move(clients), detail::normalized(std::move(counts)));
}

}  // namespace ocs
