#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "stackheat/verification.hpp"

using namespace stackheat;

TEST(Dense, LimitsAreEnforced) {
  EXPECT_THROW(assemble_dense(fixtures::system(fixtures::line(1), 65, 8.0, 8)), InstanceTooLarge);
  EXPECT_THROW(assemble_dense(fixtures::system(fixtures::line(1), 33, 8.0, 16)), InstanceTooLarge);
  DenseLimits one;
  one.followers = 1;
  EXPECT_THROW(assemble_dense(fixtures::system(fixtures::line(2), 33, 8.0, 8), false, one),
               InstanceTooLarge);
}

TEST(Dense, DofsFollowMasks) {
  const auto sys = fixtures::tiny();
  const DenseInstance d = assemble_dense(sys);
  EXPECT_EQ(d.leader_dofs.size(), sys->leader_dofs());
  for (int i = 0; i < 3; ++i) EXPECT_EQ(d.follower_dofs[i].size(), sys->follower_dofs(i));
  std::mt19937_64 rng(1);
  const FollowerBundle h = random_followers(*sys, rng);
  EXPECT_EQ(sys->bundle_norm(d.scatter_followers(d.gather_followers(h)) - h), 0.0);
}

TEST(Dense, WeightedTransposeIsAdjoint) {
  const DenseMatrix A = DenseMatrix::Random(5, 3);
  const Vector w_in = Vector::Random(5).cwiseAbs().array() + 0.5;
  const Vector w_out = Vector::Random(3).cwiseAbs().array() + 0.5;
  const Vector x = Vector::Random(3), y = Vector::Random(5);
  const double lhs = (A * x).dot(w_in.cwiseProduct(y));
  const double rhs = x.dot(w_out.cwiseProduct(weighted_transpose(A, w_in, w_out) * y));
  EXPECT_NEAR(lhs, rhs, 1e-14);
}

TEST(BruteForce, NoFollowersAndNumericalRange) {
  ScenarioConfig cfg = preset("tiny");
  cfg.scenario.follower_regions.clear();
  cfg.scenario.alpha.clear();
  const auto sys = fixtures::system(cfg);
  const DenseInstance d = assemble_dense(sys);
  const BruteForceNash b = brute_force_nash(d, sys->zero_control());
  EXPECT_EQ(b.followers.size(), 0u);
  EXPECT_EQ(b.reciprocal_condition, 1.0);

  const DenseInstance t = assemble_dense(fixtures::tiny());
  EXPECT_GT(nash_numerical_range_min(t), 0.0);
}

TEST(Inequalities, SuiteHoldsWithReportedConstants) {
  const InequalitySuiteReport rep = run_inequality_suite(Grid(1, 257, 8.0), 200, 5);
  EXPECT_TRUE(rep.passed());
  EXPECT_EQ(rep.poincare_violations, 0);
  EXPECT_LE(rep.poincare_worst_ratio, 1.0);
  EXPECT_NEAR(rep.ground_state_ratio, 1.0, 2e-3);
  EXPECT_GT(rep.moment_constant, 0.0);
  EXPECT_LE(rep.l1_worst_ratio, 1.0);
  EXPECT_NEAR(rep.l1_constant, std::sqrt(2 * std::sqrt(std::numbers::pi)), 1e-6);
}

TEST(Inequalities, TwoDimensions) {
  const InequalitySuiteReport rep = run_inequality_suite(Grid(2, 65, 8.0), 50, 6);
  EXPECT_TRUE(rep.passed());
  EXPECT_NEAR(rep.ground_state_ratio, 1.0, 2e-2);
}

TEST(Convergence, LogLogFitRecoversPowerLaw) {
  const auto [slope, r2] = loglog_fit({0.1, 0.2, 0.4}, {3e-2, 1.2e-1, 4.8e-1});
  EXPECT_NEAR(slope, 2.0, 1e-12);
  EXPECT_NEAR(r2, 1.0, 1e-12);
}

TEST(Convergence, SecondOrderInSpace) {
  const ConvergenceTable t = space_convergence(convergence_scenario(1));
  EXPECT_EQ(t.rows.size(), 3u);
  EXPECT_NEAR(t.rate, 2.0, 0.3);
}

TEST(Convergence, CrankNicolsonAndImplicitEulerInTime) {
  const ConvergenceTable cn = time_convergence(convergence_scenario(1), 0.5);
  EXPECT_NEAR(cn.rate, 2.0, 0.3);
  const ConvergenceTable ie = time_convergence(convergence_scenario(1), 1.0, {16, 32, 64, 128});
  EXPECT_NEAR(ie.rate, 1.0, 0.2);
  EXPECT_EQ(ie.kind, "time_implicit_euler");
}

TEST(Convergence, RadiusIsFlatFromEight) {
  const ConvergenceTable t = radius_convergence();
  EXPECT_TRUE(t.flat_beyond);
  EXPECT_GT(t.rows.front().difference, t.floor);
}
