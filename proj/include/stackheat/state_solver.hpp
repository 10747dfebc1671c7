#pragma once

// Forward solves: full state, per-follower resolvents L_i h_i = v_i(S), the
// leader resolvent L_0 g, and numerical bounds on their norms.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "stackheat/control_system.hpp"
#include "stackheat/krylov.hpp"

namespace stackheat {

/// Sources χ_0 g + Σ χ_i h_i per step.
inline std::vector<Vector> bundle_sources(const ControlSystem& sys, const ControlBundle& c) {
  std::vector<Vector> src(sys.steps());
  for (int k = 0; k < sys.steps(); ++k) {
    Vector f = Vector::Zero(sys.grid().size());
    if (c.leader.steps() > 0) f += c.leader[k].cwiseProduct(sys.leader_mask(k));
    for (std::size_t i = 0; i < c.followers.size(); ++i)
      f += c.followers[i][k].cwiseProduct(sys.follower_mask(static_cast<int>(i), k));
    src[k] = std::move(f);
  }
  return src;
}

inline Trajectory solve_state(const ControlSystem& sys, const ControlBundle& controls,
                              const Vector* initial = nullptr) {
  return sys.forward(bundle_sources(sys, controls), initial);
}

/// Trajectory of the follower-i sensitivity equation (source χ_i h_i).
inline Trajectory follower_trajectory(const ControlSystem& sys, int i, const ControlField& h,
                                      int last_step = -1) {
  std::vector<Vector> src(sys.steps());
  for (int k = 0; k < sys.steps(); ++k) src[k] = h[k].cwiseProduct(sys.follower_mask(i, k));
  return sys.forward(src, nullptr, last_step);
}

/// L_i h_i = v_i(S).
inline Vector resolvent_Li(const ControlSystem& sys, int i, const ControlField& h) {
  return follower_trajectory(sys, i, h).final_state();
}

/// L_0 g = z(S).
inline Vector resolvent_leader(const ControlSystem& sys, const ControlField& g) {
  std::vector<Vector> src(sys.steps());
  for (int k = 0; k < sys.steps(); ++k) src[k] = g[k].cwiseProduct(sys.leader_mask(k));
  return sys.forward(src).final_state();
}

/// Σ_i L_i h_i.
inline Vector resolvent_followers(const ControlSystem& sys, const FollowerBundle& h) {
  ControlBundle c{ControlField(), h};
  return solve_state(sys, c).final_state();
}

/// Random control supported on the masks of follower i (or the leader for i < 0).
inline ControlField random_control(const ControlSystem& sys, int i, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  ControlField c = sys.zero_control();
  for (int k = 0; k < sys.steps(); ++k) {
    const Vector& mask = i < 0 ? sys.leader_mask(k) : sys.follower_mask(i, k);
    for (Eigen::Index j = 0; j < mask.size(); ++j)
      if (mask[j] != 0.0) c[k][j] = normal(rng);
  }
  return c;
}

inline FollowerBundle random_followers(const ControlSystem& sys, std::mt19937_64& rng) {
  FollowerBundle h = sys.zero_followers();
  for (int i = 0; i < sys.followers(); ++i) h[i] = random_control(sys, i, rng);
  return h;
}

struct ResolventNorm {
  double value = 0.0;  // ‖L_i‖ from L²(0,S;L²(K)) to L²(K)
  int iterations = 0;
  bool converged = false;
};

/// ‖L_i‖ via power iteration on L_i* L_i (the adjoint is the exact transpose
/// of the stepper, restricted to the mask).
inline ResolventNorm resolvent_norm(const ControlSystem& sys, int i, std::uint64_t seed = 7,
                                    double tolerance = 1e-12, int max_iterations = 2000) {
  std::mt19937_64 rng(seed);
  ControlField h = random_control(sys, i, rng);
  auto normal_map = [&](const ControlField& x) {
    const AdjointTrajectory p = sys.backward(resolvent_Li(sys, i, x));
    ControlField out = sys.zero_control();
    for (int k = 0; k < sys.steps(); ++k) out[k] = p.states[k].cwiseProduct(sys.follower_mask(i, k));
    return out;
  };
  auto dot = [&](const ControlField& a, const ControlField& b) { return sys.control_inner(a, b); };
  const PowerResult r = power_iteration(normal_map, h, dot, tolerance, max_iterations);
  return {std::sqrt(std::max(0.0, r.eigenvalue)), r.iterations, r.converged};
}

struct CiEstimate {
  double value = 0.0;             // sup over probes of max_k ‖v^k‖_{H¹(K)} / ‖h‖
  double final_time_value = 0.0;  // ‖L_i‖ into H¹(K) at the last step
  int iterations = 0;
};

/// Numerical bound C_i: trajectory H¹(K) norms of the sensitivity equation
/// over the dominant direction of h ↦ v_i(s_last) in H¹(K) plus random probes.
inline CiEstimate estimate_Ci(const ControlSystem& sys, int i, int last_step = -1,
                              int random_probes = 4, std::uint64_t seed = 11) {
  const int last = last_step < 0 ? sys.steps() : last_step;
  const WeightedSpace& space = sys.space();
  auto dot = [&](const ControlField& a, const ControlField& b) { return sys.control_inner(a, b); };
  auto normal_map = [&](const ControlField& x) {
    const Vector v = follower_trajectory(sys, i, x, last).final_state();
    const Vector terminal = v + space.apply_L(v);  // (I + L): H¹(K) Riesz map
    const AdjointTrajectory p = sys.backward(terminal, last);
    ControlField out = sys.zero_control();
    for (int k = 0; k < last; ++k) out[k] = p.states[k].cwiseProduct(sys.follower_mask(i, k));
    return out;
  };
  std::mt19937_64 rng(seed);
  ControlField h = random_control(sys, i, rng);
  for (int k = last; k < sys.steps(); ++k) h[k].setZero();
  CiEstimate est;
  const PowerResult r = power_iteration(normal_map, h, dot, 1e-8, 300);
  est.final_time_value = std::sqrt(std::max(0.0, r.eigenvalue));
  est.iterations = r.iterations;

  auto trajectory_ratio = [&](const ControlField& x) {
    const double hn = sys.control_norm(x);
    if (hn == 0.0) return 0.0;
    const Trajectory t = follower_trajectory(sys, i, x, last);
    double best = 0.0;
    for (const auto& v : t.states) best = std::max(best, space.h1_norm_squared(v));
    return std::sqrt(best) / hn;
  };
  est.value = std::max(est.final_time_value, trajectory_ratio(h));
  for (int p = 0; p < random_probes; ++p) {
    ControlField x = random_control(sys, i, rng);
    for (int k = last; k < sys.steps(); ++k) x[k].setZero();
    est.value = std::max(est.value, trajectory_ratio(x));
  }
  return est;
}

struct EnergyCheck {
  double lhs = 0.0;  // max_k ‖v^k‖_{L²(K)}
  double rhs = 0.0;  // e^{cS} (‖v^0‖ + √S ‖f‖_{L²(0,S;L²(K))}), c = A_0 + B_0²/4 + N/2
};

inline EnergyCheck energy_bound(const ControlSystem& sys, const Trajectory& traj,
                                const std::vector<Vector>& sources) {
  const WeightedSpace& space = sys.space();
  EnergyCheck out;
  for (const auto& v : traj.states) out.lhs = std::max(out.lhs, space.norm(v));
  double f2 = 0.0;
  for (const auto& f : sources)
    if (f.size() > 0) f2 += space.inner(f, f) * sys.time().step();
  const double S = sys.time().horizon;
  const double c = sys.bound_A() + 0.25 * sys.bound_B() * sys.bound_B() + 0.5 * sys.dim();
  out.rhs = std::exp(c * S) * (space.norm(traj.states.front()) + std::sqrt(S * f2));
  return out;
}

}  // namespace stackheat
