#pragma once

// Backward solves: follower adjoints, L_i*, L_0*, and the leader's coupled
// adjoint system
//   φ backward with φ(S) = ζ + Σ_i |D_y| ρ_i² ψ_i(S),
//   ψ_i forward from 0 with source -(α_i / |D_{y,s}|) φ χ_i.
// Eliminating ψ_i leaves an equation for Φ = φ(S):
//   Φ + Σ_i α_i |D_y| ρ_i² L_i(L_i*Φ / |D_{y,s}|) = ζ.

#include <cmath>
#include <vector>

#include "stackheat/krylov.hpp"
#include "stackheat/state_solver.hpp"

namespace stackheat {

/// Backward sweep from `terminal`, the exact W-transpose of the forward stepper.
inline AdjointTrajectory solve_adjoint(const ControlSystem& sys, const Vector& terminal) {
  return sys.backward(terminal);
}

/// p^k restricted to the masks of follower i (or the leader for i < 0).
inline ControlField restrict_adjoint(const ControlSystem& sys, int i, const AdjointTrajectory& p) {
  ControlField out = sys.zero_control();
  for (int k = 0; k < sys.steps(); ++k)
    out[k] = p.states[k].cwiseProduct(i < 0 ? sys.leader_mask(k) : sys.follower_mask(i, k));
  return out;
}

/// L_i* ξ, satisfying (L_i h, ξ)_K = Σ_k Δs (h^k, (L_i*ξ)^k)_K.
inline ControlField adjoint_of_Li(const ControlSystem& sys, int i, const Vector& xi) {
  return restrict_adjoint(sys, i, sys.backward(xi));
}

inline ControlField adjoint_of_leader(const ControlSystem& sys, const Vector& xi) {
  return restrict_adjoint(sys, -1, sys.backward(xi));
}

/// L_i* ξ for every follower from a single backward sweep.
inline FollowerBundle adjoint_of_followers(const ControlSystem& sys, const Vector& xi) {
  const AdjointTrajectory p = sys.backward(xi);
  FollowerBundle out = sys.zero_followers();
  for (int i = 0; i < sys.followers(); ++i) out[i] = restrict_adjoint(sys, i, p);
  return out;
}

enum class LeaderAdjointMethod { fixed_point, krylov };

struct LeaderAdjointOptions {
  LeaderAdjointMethod method = LeaderAdjointMethod::fixed_point;
  double damping = 0.5;
  int max_iterations = 200;
  double tolerance = 1e-9;
};

struct LeaderAdjointPair {
  AdjointTrajectory phi;
  std::vector<Trajectory> psi;
  Vector zeta;
  int iterations = 0;
  double contraction = 0.0;  // observed ratio of successive updates (fixed point)
  std::vector<double> residuals;

  /// φ(S) - ζ - Σ |D_y| ρ_i² ψ_i(S), which vanishes at the solution.
  Vector coupling_defect(const ControlSystem& sys) const {
    Vector d = phi.terminal() - zeta;
    for (int i = 0; i < sys.followers(); ++i)
      d -= sys.jacobian_y() * sys.localizer(i).cwiseAbs2().cwiseProduct(psi[i].final_state());
    return d;
  }
};

namespace detail {

/// ψ_i for the backward solution φ.
inline std::vector<Trajectory> leader_psi(const ControlSystem& sys, const AdjointTrajectory& phi) {
  std::vector<Trajectory> psi;
  psi.reserve(sys.followers());
  for (int i = 0; i < sys.followers(); ++i) {
    const double a = sys.scenario().alpha(i);
    std::vector<Vector> src(sys.steps());
    for (int k = 0; k < sys.steps(); ++k)
      src[k] = (-a / sys.jacobian_ys(k)) * phi.states[k].cwiseProduct(sys.follower_mask(i, k));
    psi.push_back(sys.forward(src));
  }
  return psi;
}

/// Σ_i |D_y| ρ_i² ψ_i(S) given ψ.
inline Vector leader_coupling(const ControlSystem& sys, const std::vector<Trajectory>& psi) {
  Vector out = Vector::Zero(sys.grid().size());
  for (int i = 0; i < sys.followers(); ++i)
    out += sys.jacobian_y() * sys.localizer(i).cwiseAbs2().cwiseProduct(psi[i].final_state());
  return out;
}

}  // namespace detail

/// KΦ = Σ_i α_i |D_y| ρ_i² L_i(L_i*Φ / |D_{y,s}|); the coupling reads Φ = ζ - KΦ.
inline Vector leader_coupling_operator(const ControlSystem& sys, const Vector& terminal) {
  const AdjointTrajectory phi = sys.backward(terminal);
  return -detail::leader_coupling(sys, detail::leader_psi(sys, phi));
}

inline LeaderAdjointPair solve_leader_adjoint(const ControlSystem& sys, const Vector& zeta,
                                              const LeaderAdjointOptions& options = {}) {
  LeaderAdjointPair out;
  out.zeta = zeta;
  const WeightedSpace& space = sys.space();
  const double zeta_norm = space.norm(zeta);
  if (sys.followers() == 0 || zeta_norm == 0.0) {
    out.phi = sys.backward(zeta);
    out.psi = detail::leader_psi(sys, out.phi);
    out.residuals.push_back(0.0);
    return out;
  }

  Vector terminal = zeta;
  if (options.method == LeaderAdjointMethod::krylov) {
    auto apply = [&](const Vector& x) -> Vector { return x + leader_coupling_operator(sys, x); };
    auto dot = [&](const Vector& a, const Vector& b) { return space.inner(a, b); };
    KrylovOptions ko;
    ko.tolerance = options.tolerance;
    ko.max_iterations = options.max_iterations;
    const KrylovResult r = gmres(apply, zeta, terminal, dot, ko);
    out.iterations = r.iterations;
    out.residuals = r.residuals;
    if (!r.converged)
      throw SolverError("leader adjoint: GMRES did not converge", r.final_residual());
  } else {
    double previous_update = 0.0;
    bool converged = false;
    for (int it = 1; it <= options.max_iterations; ++it) {
      const Vector image = zeta - leader_coupling_operator(sys, terminal);
      const Vector defect = terminal - image;
      const double update = space.norm(defect);
      out.residuals.push_back(update / zeta_norm);
      out.iterations = it;
      if (previous_update > 0.0) out.contraction = update / previous_update;
      if (update <= options.tolerance * zeta_norm) {
        converged = true;
        break;
      }
      previous_update = update;
      terminal = (1.0 - options.damping) * terminal + options.damping * image;
    }
    if (!converged)
      throw SolverError("leader adjoint: fixed point did not converge (contraction " +
                            std::to_string(out.contraction) + ")",
                        out.residuals.back());
  }
  out.phi = sys.backward(terminal);
  out.psi = detail::leader_psi(sys, out.phi);
  return out;
}

}  // namespace stackheat
