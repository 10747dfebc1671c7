#pragma once

// Small scenarios shared by the unit tests.

#include <memory>
#include <random>
#include <vector>

#include "stackheat/control_system.hpp"
#include "stackheat/io.hpp"

namespace fixtures {

using namespace stackheat;

/// 1D, leader on [-1,1], followers on [2,4], [-4,-2], [4.5,6] (first `followers`).
inline PhysicalScenario line(int followers = 2, double a = 0.1, double b = 0.2) {
  PhysicalScenario p;
  p.dim = 1;
  p.horizon = 1.0;
  p.potential_a = ScalarField::constant(a);
  p.potential_b = VectorField::constant({b});
  p.leader_region = {{-1.0}, {1.0}};
  const std::vector<Box> boxes{{{2.0}, {4.0}}, {{-4.0}, {-2.0}}, {{4.5}, {6.0}}};
  for (int i = 0; i < followers; ++i) {
    p.follower_regions.push_back(boxes[i]);
    p.alpha.push_back(0.1);
  }
  p.rho_margin = 1.0;
  p.target = ScalarField::gaussian(1.0, {0.0}, 1.0);
  return p;
}

/// Space-dependent a and b, so that every step has its own matrices.
inline PhysicalScenario varying_line(int followers = 2) {
  PhysicalScenario p = line(followers);
  p.potential_a = ScalarField::gaussian(0.5, {0.3}, 2.0);
  p.potential_b = VectorField::function(1, [](Point x, double t, std::span<double> out) {
    out[0] = 0.3 * std::sin(x[0]) + 0.1 * t;
  });
  return p;
}

inline std::shared_ptr<const ControlSystem> system(const PhysicalScenario& p, int points = 65,
                                                   double radius = 8.0, int steps = 16,
                                                   double theta = 0.5, SolverOptions options = {}) {
  return make_control_system(p, Grid(p.dim, points, radius), steps, theta, options);
}

inline std::shared_ptr<const ControlSystem> system(const ScenarioConfig& cfg) {
  return make_control_system(cfg.scenario, cfg.grid(), cfg.steps, cfg.theta);
}

inline std::shared_ptr<const ControlSystem> tiny() { return system(preset("tiny")); }

/// Random interior field.
inline Vector random_state(const Grid& g, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector v(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) v[j] = g.on_boundary(j) ? 0.0 : normal(rng);
  return v;
}

inline double relative(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

}  // namespace fixtures
