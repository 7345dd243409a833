#include "ocs/oracle.hpp"

#include <random>

#include <gtest/gtest.h>

#include "ocs/sampling.hpp"
#include "test_util.hpp"

namespace ocs {
namespace {

TEST(BruteForce, WorkedExampleObjective) {
  const auto result = brute_force_probabilities(WeightedNormVector({1, 2, 3, 10}), 2);
  EXPECT_NEAR(result.objective, 22.0, 1e-8 * 22.0);
  EXPECT_LE(result.probabilities.sum(), 2.0 + kBudgetTolerance);
}

TEST(BruteForce, EqualNormsMatchUniform) {
  const WeightedNormVector norms({2, 2, 2, 2});
  const auto result = brute_force_probabilities(norms, 2);
  const double uniform = estimator_variance(norms, uniform_probabilities(4, 2));
  EXPECT_NEAR(result.objective, uniform, 1e-8 * uniform);
}

TEST(BruteForce, SingleNonzeroClient) {
  const auto result = brute_force_probabilities(WeightedNormVector({0, 0, 1}), 1);
  EXPECT_EQ(result.objective, 0.0);
  EXPECT_EQ(result.probabilities[2], 1.0);
}

TEST(BruteForce, ReportsNonConvergence) {
  BruteForceOptions opt;
  opt.max_iterations = 3;
  opt.restarts = 2;
  try {
    brute_force_probabilities(WeightedNormVector({0.01, 1, 3, 50, 70}), 2, opt);
    FAIL() << "expected ConvergenceError";
  } catch (const ConvergenceError& e) {
    EXPECT_EQ(e.best().size(), 5u);
    EXPECT_TRUE(std::isfinite(e.best_value()));
  }
}

TEST(BruteForce, AgreesWithClosedFormOnRandomInstances) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(3, 8)(rng);
    const std::size_t m = std::uniform_int_distribution<std::size_t>(1, n - 1)(rng);
    const WeightedNormVector norms(ocs::testing::log_uniform_norms(rng, n));
    const double closed = estimator_variance(norms, ocs_probabilities(norms, m).probabilities);
    const auto oracle = brute_force_probabilities(norms, m);
    EXPECT_LE(closed, oracle.objective * (1.0 + 1e-8)) << "trial " << trial;
    EXPECT_NEAR(oracle.objective, closed, 1e-8 * closed) << "trial " << trial;
  }
}

}  // namespace
}  // namespace ocs
