#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "stackheat/verification.hpp"
#include "stackheat/weighted_space.hpp"

using namespace stackheat;

TEST(Grid, NodesAreSymmetric) {
  for (int n : {3, 8, 33, 64}) {
    const Grid g(1, n, 8.0);
    for (int i = 0; i < n; ++i) EXPECT_EQ(g.axis()[i], -g.axis()[n - 1 - i]);
    EXPECT_NEAR(g.spacing(), 16.0 / (n - 1), 1e-15);
  }
  EXPECT_THROW(Grid(1, 2, 1.0), std::invalid_argument);
  EXPECT_THROW(Grid(3, 9, 1.0), std::invalid_argument);
  EXPECT_THROW(Grid(1, 9, 0.0), std::invalid_argument);
}

TEST(Grid, InteriorIndexing) {
  const Grid g(2, 6, 1.0);
  EXPECT_EQ(g.interior_size(), 16u);
  const Vector full = Vector::LinSpaced(static_cast<Eigen::Index>(g.size()), 0, g.size() - 1);
  const Vector back = g.extend_interior(g.restrict_interior(full));
  for (std::size_t j = 0; j < g.size(); ++j) EXPECT_EQ(back[j], g.on_boundary(j) ? 0.0 : full[j]);
}

TEST(WeightK, SymmetricAndAtLeastOne) {
  const Grid g(2, 17, 4.0);
  const WeightK k(g);
  for (std::size_t j = 0; j < g.size(); ++j) {
    EXPECT_GE(k.node[j], 1.0);
    const auto ij = g.unravel(j);
    const std::size_t mirror = g.ravel(g.points() - 1 - ij[0], g.points() - 1 - ij[1]);
    EXPECT_EQ(k.node[j], k.node[mirror]);
  }
}

TEST(InnerK, GroundStateIntegral) {
  const Grid g(1, 257, 8.0);
  const Field phi = Field::sample(g, [](std::span<const double> y) { return std::exp(-0.25 * y[0] * y[0]); });
  // the tail beyond |y| = 8 carries 2 sqrt(pi) erfc(4)
  const double exact = 2.0 * std::sqrt(std::numbers::pi) * std::erf(4.0);
  EXPECT_NEAR(inner_K(phi, phi), exact, 1e-9);
  EXPECT_EQ(inner_K(Field::zeros(g), Field::zeros(g)), 0.0);
  EXPECT_THROW(inner_K(phi, Field::zeros(Grid(1, 129, 8.0))), GridMismatch);
}

TEST(InnerK, SymmetricAndPositive) {
  const Grid g(2, 33, 6.0);
  const WeightedSpace s(g);
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    const Vector u = random_smooth_field(g, rng), v = random_smooth_field(g, rng);
    EXPECT_EQ(s.inner(u, v), s.inner(v, u));
    EXPECT_GT(s.inner(u, u), 0.0);
  }
}

TEST(ApplyL, GroundStateIsEigenfunction) {
  for (int n : {65, 129, 257}) {
    const Grid g(1, n, 8.0);
    const WeightedSpace s(g);
    const Vector phi = g.sample([](std::span<const double> y) { return std::exp(-0.25 * y[0] * y[0]); });
    const Vector r = s.apply_L(phi) - 0.5 * g.extend_interior(g.restrict_interior(phi));
    const double rel = s.norm(r) / s.norm(phi);
    EXPECT_LT(rel, 3.0 * g.spacing() * g.spacing()) << "n " << n;
  }
  const Grid g(1, 33, 8.0);
  EXPECT_EQ(WeightedSpace(g).apply_L(Vector::Zero(g.size())).norm(), 0.0);
}

TEST(ApplyL, SelfAdjointAndEnergyIdentity) {
  for (int dim : {1, 2}) {
    const Grid g(dim, dim == 1 ? 129 : 33, 8.0);
    const WeightedSpace s(g);
    std::mt19937_64 rng(7);
    for (int t = 0; t < 20; ++t) {
      const Vector u = random_smooth_field(g, rng), v = random_smooth_field(g, rng);
      const Vector Lu = s.apply_L(u), Lv = s.apply_L(v);
      const double scale = s.norm(Lu) * s.norm(v) + s.norm(u) * s.norm(Lv);
      EXPECT_LE(std::abs(s.inner(Lu, v) - s.inner(u, Lv)), 1e-12 * scale);
      const double energy = s.gradient_energy(u);
      EXPECT_NEAR(s.inner(Lu, u), energy, 1e-12 * energy);
      EXPECT_GT(s.inner(Lu, u), 0.0);
    }
  }
}

TEST(ApplyL, ReflectionInvariance) {
  const Grid g(2, 33, 6.0);
  const WeightedSpace s(g);
  const Vector u = g.sample([](std::span<const double> y) { return std::exp(-(y[0] * y[0] + 2 * y[1] * y[1])); });
  const Vector Lu = s.apply_L(u);
  for (std::size_t j = 0; j < g.size(); ++j) {
    const auto ij = g.unravel(j);
    const std::size_t m = g.ravel(g.points() - 1 - ij[0], g.points() - 1 - ij[1]);
    EXPECT_NEAR(Lu[j], Lu[m], 1e-13 * std::max(1.0, std::abs(Lu[j])));
  }
}

TEST(Poincare, GroundStateSaturatesAndZeroIsEquality) {
  const Grid g(1, 257, 8.0);
  const auto c = check_poincare(WeightedSpace(g), ground_state(g));
  EXPECT_LE(c.lhs, c.rhs);
  EXPECT_NEAR(c.lhs / c.rhs, 1.0, 4 * g.spacing() * g.spacing());
  const auto z = check_poincare(Field::zeros(g));
  EXPECT_EQ(z.lhs, 0.0);
  EXPECT_EQ(z.rhs, 0.0);
}

TEST(Poincare, RandomBumps) {
  const Grid g(1, 257, 8.0);
  const WeightedSpace s(g);
  std::mt19937_64 rng(11);
  for (int t = 0; t < 100; ++t) {
    const auto c = check_poincare(s, random_smooth_field(g, rng));
    EXPECT_LE(c.lhs, c.rhs);
  }
  Vector bad = Vector::Ones(g.size());
  EXPECT_THROW(check_poincare(s, bad), std::invalid_argument);
}

TEST(Spectrum, OneDimensionalLadder) {
  const auto values = spectral_probe(Grid(1, 257, 8.0), 6);
  ASSERT_EQ(values.size(), 6u);
  EXPECT_NEAR(values[0], 0.5, 1e-3);
  for (int k = 0; k + 1 < 5; ++k) EXPECT_NEAR(values[k + 1] - values[k], 0.5, 1e-2);
  for (int k = 0; k + 1 < 6; ++k) EXPECT_LT(values[k], values[k + 1]);
}

TEST(Spectrum, TwoDimensionalGroundState) {
  const auto values = spectral_probe(Grid(2, 65, 8.0), 3);
  EXPECT_NEAR(values[0], 1.0, 5e-3);
}

TEST(Spectrum, RejectsOversizeAndBadCounts) {
  EXPECT_THROW(spectral_probe(Grid(2, 129, 8.0), 1), InstanceTooLarge);
  EXPECT_THROW(spectral_probe(Grid(1, 33, 8.0), 0), std::invalid_argument);
  EXPECT_THROW(spectral_probe(Grid(1, 33, 8.0), 21), std::invalid_argument);
}

TEST(Embedding, L1ConstantMatchesClosedForm) {
  // (∫ exp(-y²/4) dy)^{1/2} = (2 sqrt(pi))^{1/2}
  const double exact = std::sqrt(2.0 * std::sqrt(std::numbers::pi));
  for (double R : {8.0, 10.0})
    EXPECT_NEAR(l1_embedding_constant(WeightedSpace(Grid(1, 257, R))), exact, 1e-6);
}
