#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "stackheat/control_system.hpp"
#include "stackheat/scenario.hpp"

using namespace stackheat;

namespace {

PhysicalScenario base(int dim = 1) {
  PhysicalScenario p;
  p.dim = dim;
  p.horizon = 1.0;
  p.potential_b = VectorField::constant(std::vector<double>(dim, 0.0));
  p.leader_region = {std::vector<double>(dim, -1.0), std::vector<double>(dim, 1.0)};
  p.follower_regions = {{std::vector<double>(dim, 2.0), std::vector<double>(dim, 3.0)}};
  p.alpha = {0.5};
  return p;
}

double fd_jacobian_determinant(int dim, double y0, double y1, double s) {
  // determinant of (y, s) -> (x, t) = (e^{s/2} y, e^s - 1)
  const double h = 1e-6;
  auto map = [&](double a, double b, double c) {
    return std::array<double, 3>{std::exp(0.5 * c) * a, std::exp(0.5 * c) * b, std::expm1(c)};
  };
  const std::array<double, 3> base_point{y0, y1, s};
  const int n = dim + 1;
  double J[3][3];
  for (int col = 0; col < n; ++col) {
    std::array<double, 3> p = base_point, m = base_point;
    const int var = col < dim ? col : 2;
    p[var] += h;
    m[var] -= h;
    const auto fp = map(p[0], p[1], p[2]);
    const auto fm = map(m[0], m[1], m[2]);
    for (int row = 0; row < n; ++row) {
      const int out = row < dim ? row : 2;
      J[row][col] = (fp[out] - fm[out]) / (2 * h);
    }
  }
  if (n == 2) return J[0][0] * J[1][1] - J[0][1] * J[1][0];
  return J[0][0] * (J[1][1] * J[2][2] - J[1][2] * J[2][1]) -
         J[0][1] * (J[1][0] * J[2][2] - J[1][2] * J[2][0]) +
         J[0][2] * (J[1][0] * J[2][1] - J[1][1] * J[2][0]);
}

}  // namespace

TEST(Similarity, ZeroPotentialsAndHorizon) {
  PhysicalScenario p = base();
  p.horizon = std::exp(1.0) - 1.0;
  const SimilarityScenario s(p);
  EXPECT_NEAR(s.horizon(), 1.0, 1e-15);
  const double y = 0.7;
  EXPECT_EQ(s.potential_a(std::span<const double>(&y, 1), 0.4), 0.0);
  double b = 1.0;
  s.potential_b(std::span<const double>(&y, 1), 0.4, std::span<double>(&b, 1));
  EXPECT_EQ(b, 0.0);
  EXPECT_TRUE(s.potentials_vanish());
}

TEST(Similarity, ConstantPotentialScalesWithTime) {
  PhysicalScenario p = base();
  p.potential_a = ScalarField::constant(0.3);
  p.potential_b = VectorField::constant({0.2});
  const SimilarityScenario s(p);
  const double y = -1.3;
  for (double t : {0.0, 0.2, 0.5}) {
    EXPECT_NEAR(s.potential_a(std::span<const double>(&y, 1), t), std::exp(t) * 0.3, 1e-15);
    double b = 0;
    s.potential_b(std::span<const double>(&y, 1), t, std::span<double>(&b, 1));
    EXPECT_NEAR(b, std::exp(0.5 * t) * 0.2, 1e-15);
  }
}

TEST(Similarity, SpatiallyVaryingPotentialIsEvaluatedAtStretchedPoint) {
  PhysicalScenario p = base();
  p.potential_a = ScalarField::function([](Point x, double t) { return x[0] * x[0] + t; });
  const SimilarityScenario s(p);
  const double y = 0.8, sv = 0.3;
  const double x = std::exp(0.5 * sv) * y, t = std::expm1(sv);
  EXPECT_NEAR(s.potential_a(std::span<const double>(&y, 1), sv), std::exp(sv) * (x * x + t), 1e-14);
}

TEST(Similarity, JacobianValues) {
  PhysicalScenario p = base();
  const SimilarityScenario one(p);
  EXPECT_NEAR(one.jacobian_ys(0.0), 1.0, 1e-15);
  EXPECT_NEAR(one.jacobian_y(), std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(one.jacobian_ys(0.3), std::exp(1.5 * 0.3), 1e-14);

  PhysicalScenario q = base(2);
  q.horizon = 1.0;
  const SimilarityScenario two(q);
  EXPECT_NEAR(two.jacobian_ys(std::log(2.0)), 4.0, 1e-13);

  p.horizon = 3.0;
  EXPECT_NEAR(SimilarityScenario(p).jacobian_y(), 2.0, 1e-15);
  EXPECT_THROW(one.jacobian_ys(-0.1), std::out_of_range);
  EXPECT_THROW(one.jacobian_ys(one.horizon() + 0.1), std::out_of_range);
}

TEST(Similarity, JacobianMatchesFiniteDifferenceDeterminant) {
  for (int dim : {1, 2}) {
    PhysicalScenario p = base(dim);
    p.horizon = 2.0;
    const SimilarityScenario s(p);
    for (double sv : {0.0, 0.4, 1.0}) {
      const double det = fd_jacobian_determinant(dim, 0.3, -0.6, sv);
      EXPECT_NEAR(s.jacobian_ys(sv), det, 1e-6 * det) << "dim " << dim << " s " << sv;
    }
    // spatial part at t = T
    const double stretch = std::sqrt(1.0 + p.horizon);
    EXPECT_NEAR(s.jacobian_y(), std::pow(stretch, dim), 1e-13);
  }
}

TEST(Similarity, JacobianBoundsHoldOnGridTimes) {
  for (int dim : {1, 2}) {
    PhysicalScenario p = base(dim);
    p.horizon = 1.5;
    const SimilarityScenario s(p);
    const JacobianBounds b = s.jacobian_bounds();
    EXPECT_EQ(b.k1, 1.0);
    EXPECT_NEAR(b.k2, std::exp(s.horizon() * (dim + 2) / 2.0), 1e-12);
    for (int k = 0; k <= 64; ++k) {
      const double d = s.jacobian_ys(s.horizon() * k / 64);
      EXPECT_GE(d, b.k1);
      EXPECT_LE(d, b.k2 * (1 + 1e-14));
    }
    EXPECT_GE(s.jacobian_y(), b.k3);
    EXPECT_LE(s.jacobian_y(), b.k4);
  }
}

TEST(Similarity, RegionsShrinkAndStayDisjoint) {
  PhysicalScenario p = base(2);
  p.leader_region = {{-1.0, -1.0}, {1.0, 1.0}};
  p.follower_regions = {{{1.5, -1.0}, {3.0, 1.0}}, {{-3.0, -1.0}, {-1.5, 1.0}}};
  p.alpha = {0.1, 0.1};
  const SimilarityScenario s(p);
  const Box start = s.leader_region(0.0);
  for (double sv : {0.1, 0.3, s.horizon()}) {
    EXPECT_TRUE(start.contains(s.leader_region(sv)));
    EXPECT_FALSE(s.follower_region(0, sv).overlaps(s.follower_region(1, sv)));
    EXPECT_FALSE(s.follower_region(0, sv).overlaps(s.leader_region(sv)));
    EXPECT_NEAR(s.leader_region(sv).hi[0], std::exp(-0.5 * sv), 1e-15);
  }
}

TEST(Similarity, TargetScaling) {
  PhysicalScenario p = base();
  p.target = ScalarField::gaussian(1.0, {0.0}, 1.0);
  const SimilarityScenario s(p);
  const double y = 0.6;
  EXPECT_NEAR(s.target(std::span<const double>(&y, 1)), std::sqrt(2.0) * std::exp(-2.0 * y * y), 1e-15);
}

TEST(Similarity, ValidationNamesKeys) {
  auto key_of = [](const PhysicalScenario& p) {
    try {
      p.validate();
    } catch (const ConfigError& e) {
      return e.key();
    }
    return std::string("<none>");
  };
  PhysicalScenario p = base();
  EXPECT_EQ(key_of(p), "<none>");
  p.horizon = 0.0;
  EXPECT_EQ(key_of(p), "T");
  p = base();
  p.follower_regions[0] = {{3.0}, {2.0}};
  EXPECT_EQ(key_of(p), "follower_boxes[0]");
  p = base();
  p.follower_regions[0] = {{0.5}, {2.0}};
  EXPECT_EQ(key_of(p), "follower_boxes[0]");
  p = base();
  p.alpha = {-1.0};
  EXPECT_EQ(key_of(p), "alpha[0]");
  p = base();
  p.follower_regions.push_back({{2.5}, {4.0}});
  p.alpha.push_back(1.0);
  EXPECT_EQ(key_of(p), "follower_boxes[1]");
  p = base();
  p.dim = 3;
  EXPECT_EQ(key_of(p), "dim");
}

TEST(ChangeOfVariables, ConstantLeaderControlPullsBack) {
  // g = 1 in 1D gives f(x,t) = (1+t)^{-3/2}
  const auto f = to_physical_function([](Point, double) { return 1.0; }, 1, scaling::control(1));
  const double x = 0.4;
  for (double t : {0.0, 0.5, 1.0})
    EXPECT_NEAR(f(std::span<const double>(&x, 1), t), std::pow(1.0 + t, -1.5), 1e-15);
  const auto zero = to_physical_function([](Point, double) { return 0.0; }, 1, scaling::control(1));
  EXPECT_EQ(zero(std::span<const double>(&x, 1), 0.3), 0.0);
}

TEST(ChangeOfVariables, RoundTripOnCoincidentNodes) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int dim : {1, 2}) {
    for (int trial = 0; trial < 10; ++trial) {
      const double c0 = u(rng), c1 = u(rng), w = 1.0 + u(rng) * 0.5;
      const SpaceTimeFunction g = [=](Point y, double s) {
        double r2 = (y[0] - c0) * (y[0] - c0);
        if (y.size() > 1) r2 += (y[1] - c1) * (y[1] - c1);
        return std::exp(-r2 / (w * w)) * std::cos(s);
      };
      for (double p : {scaling::state(dim), scaling::control(dim), scaling::zeroth_order_potential}) {
        const auto back = to_similarity_function(to_physical_function(g, dim, p), dim, p);
        const Grid grid(dim, 9, 3.0);
        for (std::size_t j = 0; j < grid.size(); ++j) {
          const auto y = grid.point(j);
          const std::span<const double> yp(y.data(), dim);
          for (double s : {0.0, 0.25, std::log(2.0)}) {
            const double ref = g(yp, s);
            EXPECT_NEAR(back(yp, s), ref, 1e-12 * std::max(1.0, std::abs(ref)));
          }
        }
      }
    }
  }
}

TEST(ChangeOfVariables, GridControlRoundTrip) {
  PhysicalScenario p = base();
  const auto sys = make_control_system(p, Grid(1, 33, 6.0), 16);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  ControlField g = sys->zero_control();
  for (int k = 0; k < sys->steps(); ++k)
    for (Eigen::Index j = 0; j < g[k].size(); ++j) g[k][j] = n(rng);
  const auto slices = to_physical_controls(*sys, g);
  EXPECT_NEAR(slices[3].time, std::expm1(sys->time().time(3)), 1e-15);
  const ControlField back = from_physical_controls(*sys, slices);
  for (int k = 0; k < sys->steps(); ++k)
    EXPECT_LE((back[k] - g[k]).cwiseAbs().maxCoeff(), 1e-12 * g[k].cwiseAbs().maxCoeff());
}

TEST(Localizer, EqualsOneOnFinalRegionAndRampsOutside) {
  PhysicalScenario p = base();
  const SimilarityScenario s(p);
  const Box fin = s.follower_region(0, s.horizon());
  const double inside = 0.5 * (fin.lo[0] + fin.hi[0]);
  EXPECT_EQ(s.localizer(0, std::span<const double>(&inside, 1), 0.5), 1.0);
  const double near = fin.hi[0] + 0.25;
  const double ramp = s.localizer(0, std::span<const double>(&near, 1), 0.5);
  EXPECT_GT(ramp, 0.0);
  EXPECT_LT(ramp, 1.0);
  const double far = fin.hi[0] + 0.6;
  EXPECT_EQ(s.localizer(0, std::span<const double>(&far, 1), 0.5), 0.0);
  EXPECT_EQ(s.localizer(0, std::span<const double>(&near, 1), 0.0), 0.0);
}
