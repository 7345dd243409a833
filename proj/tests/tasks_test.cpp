#include "ocs/tasks.hpp"

#include <cstdio>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "ocs/federation_io.hpp"

namespace ocs {
namespace {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

Vec scalar(double v) { return Vec::Constant(1, v); }

QuadraticFederation two_client_line() {
  std::vector<QuadraticClientTask> clients{QuadraticClientTask(Mat::Ones(1, 1), scalar(0.0)),
                                           QuadraticClientTask(Mat::Ones(1, 1), scalar(2.0))};
  return QuadraticFederation(std::move(clients), {0.5, 0.5});
}

Vec random_point(std::mt19937_64& rng, Eigen::Index d, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  Vec x(d);
  for (Eigen::Index i = 0; i < d; ++i) x(i) = g(rng);
  return x;
}

template <class Task>
void expect_gradients_match_finite_differences(const Task& task, std::mt19937_64& rng) {
  const Eigen::Index d = task.dimension();
  for (int trial = 0; trial < 100; ++trial) {
    const Vec x = random_point(rng, d, 2.0);
    const Vec g = task.gradient(x);
    Vec fd(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(x(j)));
      Vec a = x, b = x;
      a(j) += h;
      b(j) -= h;
      fd(j) = (task.value(a) - task.value(b)) / (2 * h);
    }
    ASSERT_LE((fd - g).norm(), 1e-6 * std::max(1.0, g.norm())) << "trial " << trial;
  }
}

TEST(QuadraticFederation, TwoClientLine) {
  const auto fed = two_client_line();
  EXPECT_NEAR(fed.x_star()(0), 1.0, 1e-15);
  EXPECT_NEAR(fed.f_star(), 0.5, 1e-15);
  ASSERT_EQ(fed.Z().size(), 2u);
  EXPECT_NEAR(fed.Z()[0], 0.5, 1e-15);
  EXPECT_NEAR(fed.Z()[1], 0.5, 1e-15);
  EXPECT_EQ(fed.L(), 1.0);
  EXPECT_NEAR(fed.mu(), 1.0, 1e-15);
  EXPECT_EQ(fed.W(), 0.5);

  const auto m = exact_metrics(fed, scalar(0.0));
  EXPECT_NEAR(m.suboptimality, 0.5, 1e-15);
  EXPECT_NEAR(m.dist_sq, 1.0, 1e-15);
  EXPECT_NEAR(m.client_gradients[0](0), 0.0, 0.0);
  EXPECT_NEAR(m.client_gradients[1](0), -2.0, 0.0);
  EXPECT_NEAR(m.dispersion, 1.0, 1e-15);
}

TEST(QuadraticFederation, MetricsVanishAtOptimum) {
  const auto fed = make_quadratic_federation(8, 5, 1.5, WeightScheme::proportional_lognormal, 3);
  const auto m = exact_metrics(fed, fed.x_star());
  EXPECT_EQ(m.suboptimality, 0.0);
  EXPECT_EQ(m.dist_sq, 0.0);
  EXPECT_GT(m.dispersion, 0.0);
  EXPECT_LT(fed.gradient(fed.x_star()).norm(), 1e-10);
}

TEST(QuadraticFederation, HomogeneousHasZeroHeterogeneity) {
  const auto fed = make_quadratic_federation(6, 4, 0.0, WeightScheme::uniform, 11);
  for (double z : fed.Z()) EXPECT_EQ(z, 0.0);
  EXPECT_EQ(fed.x_star(), fed.client(0).center());
  EXPECT_EQ(exact_metrics(fed, fed.x_star()).dispersion, 0.0);
}

TEST(QuadraticFederation, SharedCurvatureHomogeneousHasZeroDispersion) {
  QuadraticOptions opt;
  opt.shared_curvature = true;
  const auto fed = make_quadratic_federation(5, 3, 0.0, WeightScheme::uniform, 2, opt);
  std::mt19937_64 rng(1);
  for (int k = 0; k < 20; ++k) EXPECT_EQ(fed.dispersion(random_point(rng, 3, 3.0)), 0.0);
}

TEST(QuadraticFederation, WeightSchemes) {
  const auto uni = make_quadratic_federation(7, 2, 1.0, WeightScheme::uniform, 5);
  for (double w : uni.weights()) EXPECT_DOUBLE_EQ(w, 1.0 / 7);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto fed = make_quadratic_federation(4, 2, 1.0, WeightScheme::proportional_lognormal, seed);
    EXPECT_GT(fed.W(), 0.25);
    double total = 0.0;
    for (double w : fed.weights()) total += w;
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(QuadraticFederation, WeightSpreadAndCenterScale) {
  QuadraticOptions flat;
  flat.weight_sigma = 0.0;
  const auto even = make_quadratic_federation(5, 3, 1.0, WeightScheme::proportional_lognormal, 2, flat);
  for (double w : even.weights()) EXPECT_DOUBLE_EQ(w, 0.2);

  QuadraticOptions wide;
  wide.weight_sigma = 3.0;
  const auto narrow = make_quadratic_federation(32, 2, 1.0, WeightScheme::proportional_lognormal, 4);
  const auto skewed = make_quadratic_federation(32, 2, 1.0, WeightScheme::proportional_lognormal, 4, wide);
  EXPECT_GT(skewed.W(), narrow.W());

  QuadraticOptions scaled;
  scaled.center_scale = 0.5;
  const auto base = make_quadratic_federation(6, 3, 2.0, WeightScheme::uniform, 8);
  const auto half = make_quadratic_federation(6, 3, 2.0, WeightScheme::uniform, 8, scaled);
  EXPECT_LT((half.x_star() - 0.5 * base.x_star()).norm(), 1e-12);
  EXPECT_NEAR(half.value(Vector::Zero(3)) - half.f_star(), 0.25 * (base.value(Vector::Zero(3)) - base.f_star()), 1e-12);
  EXPECT_DOUBLE_EQ(half.L(), base.L());

  QuadraticOptions bad;
  bad.center_scale = 0.0;
  EXPECT_THROW(make_quadratic_federation(3, 2, 1.0, WeightScheme::uniform, 1, bad), ValidationError);
  bad = {};
  bad.weight_sigma = -1.0;
  EXPECT_THROW(make_quadratic_federation(3, 2, 1.0, WeightScheme::uniform, 1, bad), ValidationError);
}

TEST(QuadraticFederation, ConstantsMatchNumericEigensolve) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto fed = make_quadratic_federation(6, 8, 2.0, WeightScheme::proportional_lognormal, seed);
    double l_numeric = 0.0;
    Mat h = Mat::Zero(8, 8);
    for (std::size_t i = 0; i < fed.size(); ++i) {
      const Mat& a = fed.client(i).curvature();
      Eigen::EigenSolver<Mat> general(a);
      l_numeric = std::max(l_numeric, general.eigenvalues().real().maxCoeff());
      h += fed.weight(i) * a;
      EXPECT_GE(fed.client(i).smoothness(), 0.1 - 1e-12);
      EXPECT_LE(fed.client(i).smoothness(), 10.0 + 1e-12);
    }
    EXPECT_NEAR(fed.L(), l_numeric, 1e-8 * l_numeric);
    const double mu_numeric = Eigen::EigenSolver<Mat>(h).eigenvalues().real().minCoeff();
    EXPECT_NEAR(fed.mu(), mu_numeric, 1e-8 * mu_numeric);
    // x* from an independent route: solve the normal equations by QR.
    Vec rhs = Vec::Zero(8);
    for (std::size_t i = 0; i < fed.size(); ++i)
      rhs += fed.weight(i) * fed.client(i).curvature() * fed.client(i).center();
    const Vec x_qr = h.colPivHouseholderQr().solve(rhs);
    EXPECT_LE((x_qr - fed.x_star()).norm(), 1e-8 * (1 + x_qr.norm()));
    for (std::size_t i = 0; i < fed.size(); ++i) {
      const Vec r = fed.x_star() - fed.client(i).center();
      EXPECT_NEAR(fed.Z()[i], 0.5 * r.dot(fed.client(i).curvature() * r), 1e-10 * (1 + fed.Z()[i]));
    }
  }
}

TEST(QuadraticFederation, OptimumIsGlobal) {
  const auto fed = make_quadratic_federation(10, 6, 2.0, WeightScheme::proportional_lognormal, 8);
  std::mt19937_64 rng(9);
  for (int k = 0; k < 10000; ++k) {
    const Vec x = fed.x_star() + random_point(rng, 6, k % 2 ? 1e-3 : 3.0);
    ASSERT_GE(fed.value(x), fed.f_star());
  }
}

TEST(QuadraticFederation, GradientsMatchFiniteDifferences) {
  const auto fed = make_quadratic_federation(4, 5, 2.0, WeightScheme::uniform, 1);
  std::mt19937_64 rng(2);
  for (const auto& c : fed.clients()) expect_gradients_match_finite_differences(c, rng);
}

TEST(QuadraticFederation, SameSeedSameFederation) {
  const auto a = make_quadratic_federation(5, 3, 1.0, WeightScheme::proportional_lognormal, 42);
  const auto b = make_quadratic_federation(5, 3, 1.0, WeightScheme::proportional_lognormal, 42);
  EXPECT_EQ(federation_to_json(a), federation_to_json(b));
  const auto c = make_quadratic_federation(5, 3, 1.0, WeightScheme::proportional_lognormal, 43);
  EXPECT_NE(federation_to_json(a), federation_to_json(c));
}

TEST(QuadraticFederation, RejectsInvalidInput) {
  EXPECT_THROW(QuadraticClientTask(-Mat::Identity(2, 2), Vec::Zero(2)), ValidationError);
  Mat asym(2, 2);
  asym << 1, 0.5, 0, 1;
  EXPECT_THROW(QuadraticClientTask(asym, Vec::Zero(2)), ValidationError);
  EXPECT_THROW(QuadraticClientTask(Mat::Identity(2, 2), Vec::Zero(3)), ValidationError);
  std::vector<QuadraticClientTask> one{QuadraticClientTask(Mat::Identity(1, 1), scalar(0))};
  EXPECT_THROW(QuadraticFederation(one, {0.9}), ValidationError);
  EXPECT_THROW(QuadraticFederation(one, {1.0, 0.0}), ValidationError);
  EXPECT_THROW(make_quadratic_federation(0, 2, 1.0, WeightScheme::uniform, 1), ValidationError);
  EXPECT_THROW(make_quadratic_federation(2, 2, -1.0, WeightScheme::uniform, 1), ValidationError);
}

TEST(LogisticFederation, WeightsFollowCounts) {
  const auto fed = make_logistic_federation(3, 4, {90, 5, 5}, 7);
  EXPECT_NEAR(fed.weight(0), 0.9, 1e-15);
  EXPECT_NEAR(fed.weight(1), 0.05, 1e-15);
  EXPECT_NEAR(fed.weight(2), 0.05, 1e-15);
  const auto even = make_logistic_federation(4, 3, {20, 20, 20, 20}, 7);
  for (double w : even.weights()) EXPECT_DOUBLE_EQ(w, 0.25);
}

TEST(LogisticFederation, ReferenceSolveIsTight) {
  const auto fed = make_logistic_federation(5, 6, {40, 12, 30, 8, 25}, 3);
  EXPECT_LT(fed.gradient(fed.x_star()).norm(), 1e-10);
  EXPECT_EQ(fed.mu(), 0.1);
  for (double z : fed.Z()) EXPECT_GE(z, 0.0);
  std::mt19937_64 rng(4);
  for (int k = 0; k < 10000; ++k) {
    const Vec x = fed.x_star() + random_point(rng, 6, k % 2 ? 1e-3 : 2.0);
    ASSERT_GE(fed.value(x), fed.f_star());
  }
}

TEST(LogisticFederation, SmoothnessBoundsHessian) {
  const auto fed = make_logistic_federation(3, 5, {30, 10, 20}, 5);
  std::mt19937_64 rng(6);
  for (const auto& c : fed.clients()) {
    for (int k = 0; k < 20; ++k) {
      const Mat h = c.hessian(random_point(rng, 5, 2.0));
      const auto eig = Eigen::SelfAdjointEigenSolver<Mat>(h).eigenvalues();
      EXPECT_LE(eig.maxCoeff(), c.smoothness() * (1 + 1e-12));
      EXPECT_GE(eig.minCoeff(), c.lambda() * (1 - 1e-12));
    }
  }
}

TEST(LogisticFederation, GradientsMatchFiniteDifferences) {
  const auto fed = make_logistic_federation(3, 4, {25, 15, 10}, 9);
  std::mt19937_64 rng(10);
  for (const auto& c : fed.clients()) expect_gradients_match_finite_differences(c, rng);
}

TEST(LogisticFederation, ReportsFailedReferenceSolve) {
  // Separable data without regularization: the minimizer runs off to infinity
  // and a few Newton steps cannot reach the gradient tolerance.
  Mat x(1, 1);
  x << 1.0;
  const std::vector<LogisticClientTask> clients{LogisticClientTask(x, Vec::Ones(1), 0.0)};
  const std::vector<double> w{1.0};
  try {
    detail::newton_minimize(std::span<const LogisticClientTask>(clients), std::span<const double>(w), Vec::Zero(1),
                            1e-10, "test", 5);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.best().size(), 1u);
    EXPECT_GT(e.best()[0], 0.0);
  }
}

TEST(LogisticFederation, RejectsInvalidInput) {
  Mat x(2, 2);
  x << 1, 2, 3, 4;
  Vec bad(2);
  bad << 1, 0;
  EXPECT_THROW(LogisticClientTask(x, bad, 0.1), ValidationError);
  EXPECT_THROW(LogisticClientTask(x, Vec::Ones(2), -1.0), ValidationError);
  EXPECT_THROW(make_logistic_federation(2, 2, {3, 0}, 1), ValidationError);
}

TEST(FederationIo, QuadraticRoundTrip) {
  const auto fed = make_quadratic_federation(4, 3, 1.0, WeightScheme::proportional_lognormal, 12);
  const auto text = federation_to_json(fed);
  const auto back = federation_from_json<QuadraticClientTask>(text);
  EXPECT_EQ(back.weights(), fed.weights());
  EXPECT_EQ(federation_to_json(back), text);
  EXPECT_LE((back.x_star() - fed.x_star()).norm(), 1e-12);
  EXPECT_NEAR(back.L(), fed.L(), 1e-10);
  std::mt19937_64 rng(1);
  for (int k = 0; k < 10; ++k) {
    const Vec x = random_point(rng, 3, 1.0);
    EXPECT_EQ(back.value(x), fed.value(x));
  }
}

TEST(FederationIo, LogisticFileRoundTrip) {
  const auto fed = make_logistic_federation(3, 2, {6, 4, 5}, 2);
  const std::string path = ::testing::TempDir() + "ocs_logistic_fed.json";
  save_federation(fed, path);
  const auto back = load_federation<LogisticClientTask>(path);
  std::remove(path.c_str());
  EXPECT_EQ(federation_to_json(back), federation_to_json(fed));
  EXPECT_EQ(back.x_star(), fed.x_star());
}

TEST(FederationIo, RejectsMalformedDocuments) {
  EXPECT_THROW(federation_from_json<QuadraticClientTask>("{"), ValidationError);
  EXPECT_THROW(federation_from_json<QuadraticClientTask>(R"({"kind":"logistic","weights":[1],"clients":[]})"),
               ValidationError);
  EXPECT_THROW(federation_from_json<QuadraticClientTask>(R"({"kind":"quadratic","weights":[1]})"),
               ValidationError);
  EXPECT_THROW(load_federation<QuadraticClientTask>("/nonexistent/fed.json"), ValidationError);
}

}  // namespace
}  // namespace ocs
