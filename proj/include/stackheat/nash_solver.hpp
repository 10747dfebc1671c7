#pragma once

// Followers' Nash equilibrium for a fixed leader control g.
//
// Follower i minimizes
//   J_i = ½ Σ_k Δs d_k ‖h_i^k‖²_K + (α_i/2) D_y ‖ρ_i (v(S) - v^S)‖²_K,
// with d_k = |D_{y,s}(s_k)|, D_y = |D_y|. The equilibrium solves 𝔏h = ξ,
//   (𝔏h)_i = d h_i + α_i L_i*(ρ_i² D_y Σ_j L_j h_j),
//   ξ_i    = α_i L_i*(ρ_i² D_y (v^S - L_0 g)).

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stackheat/adjoint_solver.hpp"
#include "stackheat/krylov.hpp"
#include "stackheat/state_solver.hpp"

namespace stackheat {

struct NashOptions {
  double tolerance = 1e-10;
  int max_iterations = 500;
  int restart = 60;
  bool diagnostics = true;  // compute C_S and the smallness margin
};

struct CoercivityDiagnostic {
  JacobianBounds bounds{};
  double alpha_max = 0.0;
  double rho_max = 0.0;
  std::vector<double> C_S;  // numerical estimates, one per follower
  double C_S_max = 0.0;
  /// k1/2 - ᾱ k4 ρ̄ n C_S².
  double margin = 0.0;
};

struct NashSolveReport {
  std::vector<double> residuals;
  int iterations = 0;
  bool converged = false;
  std::string method;
  std::optional<CoercivityDiagnostic> coercivity;
  bool verified = false;
  std::string warning;
};

struct NashVerification {
  std::vector<double> euler_lagrange;     // ‖(𝔏h - ξ)_i‖ / ‖ξ‖, per follower
  std::vector<double> worst_deviation;    // min over probes of (J_i(dev) - J_i(h)) / scale
  std::vector<double> derivative_error;   // analytic vs central difference, relative
  std::vector<std::string> violations;
  bool passed = true;
};

struct NashVerifyOptions {
  double euler_lagrange_tolerance = 1e-9;
  double deviation_slack = 1e-12;
  double derivative_tolerance = 1e-6;
  int perturbations = 8;
  std::vector<double> steps{1e-2, 1e-3};
  std::uint64_t seed = 1;
};

class NashGame {
 public:
  explicit NashGame(std::shared_ptr<const ControlSystem> system) : sys_(std::move(system)) {}

  const ControlSystem& system() const { return *sys_; }
  std::shared_ptr<const ControlSystem> system_ptr() const { return sys_; }

  /// ξ_i = α_i L_i*(ρ_i² D_y η).
  FollowerBundle rhs_from_gap(const Vector& gap) const {
    FollowerBundle xi = sys_->zero_followers();
    for (int i = 0; i < sys_->followers(); ++i) {
      const double a = sys_->scenario().alpha(i);
      if (a == 0.0) continue;
      const Vector terminal = (a * sys_->jacobian_y()) * sys_->localizer(i).cwiseAbs2().cwiseProduct(gap);
      xi[i] = adjoint_of_Li(*sys_, i, terminal);
    }
    return xi;
  }

  /// η^S = v^S - L_0 g.
  Vector target_gap(const ControlField& g) const {
    return sys_->target() - resolvent_leader(*sys_, g);
  }

  FollowerBundle build_rhs(const ControlField& g) const { return rhs_from_gap(target_gap(g)); }

  FollowerBundle apply(const FollowerBundle& h) const {
    const Vector sum = resolvent_followers(*sys_, h);
    FollowerBundle out = rhs_from_gap(sum);
    for (int i = 0; i < sys_->followers(); ++i)
      for (int k = 0; k < sys_->steps(); ++k)
        out[i][k] += sys_->jacobian_ys(k) * h[i][k].cwiseProduct(sys_->follower_mask(i, k));
    return out;
  }

  double inner(const FollowerBundle& a, const FollowerBundle& b) const {
    return sys_->bundle_inner(a, b);
  }

  /// Solve 𝔏h = ξ. CG for one follower (𝔏 is then self-adjoint), GMRES
  /// otherwise; Richardson with the coercivity step if the Krylov method stalls.
  FollowerBundle solve_rhs(const FollowerBundle& xi, NashSolveReport& report,
                           const NashOptions& options = {},
                           const FollowerBundle* warm = nullptr) const {
    FollowerBundle h = warm ? *warm : sys_->zero_followers();
    if (sys_->followers() == 0) {
      report.converged = true;
      report.method = "none";
      return h;
    }
    auto op = [&](const FollowerBundle& x) { return apply(x); };
    auto dot = [&](const FollowerBundle& a, const FollowerBundle& b) { return inner(a, b); };
    KrylovOptions ko{options.tolerance, options.max_iterations, options.restart};
    KrylovResult r;
    if (sys_->followers() == 1) {
      report.method = "cg";
      r = conjugate_gradient(op, xi, h, dot, ko);
    } else {
      report.method = "gmres";
      r = gmres(op, xi, h, dot, ko);
    }
    if (!r.converged) {
      const CoercivityDiagnostic& c = coercivity();
      const double lower = c.margin > 0 ? c.bounds.k1 / 2.0 : 0.25 * c.bounds.k1;
      const double upper = c.bounds.k2 + c.alpha_max * c.bounds.k4 * c.rho_max *
                                             sys_->followers() * c.C_S_max * c.C_S_max;
      report.method += "+richardson";
      const KrylovResult rr = richardson(op, xi, h, dot, lower / (upper * upper), ko);
      r.residuals.insert(r.residuals.end(), rr.residuals.begin(), rr.residuals.end());
      r.iterations += rr.iterations;
      r.converged = rr.converged;
    }
    report.residuals = std::move(r.residuals);
    report.iterations = r.iterations;
    report.converged = r.converged;
    if (!report.converged)
      throw SolverError("Nash solve did not converge", report.residuals.back());
    return h;
  }

  std::pair<FollowerBundle, NashSolveReport> solve(const ControlField& g,
                                                   const NashOptions& options = {},
                                                   const FollowerBundle* warm = nullptr) const {
    NashSolveReport report;
    if (options.diagnostics) {
      report.coercivity = coercivity();
      if (report.coercivity->margin <= 0.0)
        report.warning = "smallness margin is not positive; equilibrium not certified";
    }
    FollowerBundle h = solve_rhs(build_rhs(g), report, options, warm);
    return {std::move(h), std::move(report)};
  }

  /// J_i from the state v(S) of the full system.
  double cost(int i, const ControlField& g, const FollowerBundle& h) const {
    ControlBundle c{g, h};
    const Vector gap = solve_state(*sys_, c).final_state() - sys_->target();
    return cost_from_gap(i, h, gap);
  }

  /// J_i rewritten through η^S: the follower sum and L_0 g are solved separately.
  double cost_rewritten(int i, const ControlField& g, const FollowerBundle& h) const {
    const Vector eta = target_gap(g);
    const Vector gap = resolvent_followers(*sys_, h) - eta;
    return cost_from_gap(i, h, gap);
  }

  /// Gradient of J_i with respect to h_i in the L²(0,S;L²(K)) product:
  ///   d h_i + α_i L_i*(ρ_i² D_y (v(S) - v^S)).
  ControlField cost_gradient(int i, const ControlField& g, const FollowerBundle& h) const {
    ControlBundle c{g, h};
    const Vector gap = solve_state(*sys_, c).final_state() - sys_->target();
    const double a = sys_->scenario().alpha(i);
    ControlField grad = adjoint_of_Li(
        *sys_, i, (a * sys_->jacobian_y()) * sys_->localizer(i).cwiseAbs2().cwiseProduct(gap));
    for (int k = 0; k < sys_->steps(); ++k)
      grad[k] += sys_->jacobian_ys(k) * h[i][k].cwiseProduct(sys_->follower_mask(i, k));
    return grad;
  }

  NashVerification verify(const ControlField& g, const FollowerBundle& h,
                          const NashVerifyOptions& options = {}) const {
    NashVerification out;
    const int n = sys_->followers();
    const FollowerBundle xi = build_rhs(g);
    const FollowerBundle defect = apply(h) - xi;
    const double xi_norm = std::max(sys_->bundle_norm(xi), 1e-300);
    std::mt19937_64 rng(options.seed);
    for (int i = 0; i < n; ++i) {
      const double el = sys_->control_norm(defect[i]) / xi_norm;
      out.euler_lagrange.push_back(el);
      if (el > options.euler_lagrange_tolerance)
        out.violations.push_back("euler_lagrange[" + std::to_string(i) + "]");

      const double base = cost(i, g, h);
      const ControlField grad = cost_gradient(i, g, h);
      double worst = std::numeric_limits<double>::infinity();
      double worst_derivative = 0.0;
      for (int p = 0; p < options.perturbations; ++p) {
        ControlField delta = random_control(*sys_, i, rng);
        const double hn = sys_->control_norm(h[i]);
        delta *= (hn > 0 ? hn : 1.0) / sys_->control_norm(delta);
        const double analytic = sys_->control_inner(grad, delta);
        for (double t : options.steps) {
          FollowerBundle plus = h, minus = h;
          plus[i] += t * delta;
          minus[i] -= t * delta;
          const double jp = cost(i, g, plus);
          const double jm = cost(i, g, minus);
          const double scale = std::max(std::abs(base), 1e-300);
          worst = std::min({worst, (jp - base) / scale, (jm - base) / scale});
          const double fd = (jp - jm) / (2 * t);
          const double dscale = std::max({std::abs(analytic), std::abs(fd), std::abs(base)});
          worst_derivative = std::max(worst_derivative, std::abs(analytic - fd) / dscale);
        }
      }
      out.worst_deviation.push_back(worst);
      out.derivative_error.push_back(worst_derivative);
      if (worst < -options.deviation_slack)
        out.violations.push_back("unilateral_deviation[" + std::to_string(i) + "]");
      if (worst_derivative > options.derivative_tolerance)
        out.violations.push_back("derivative[" + std::to_string(i) + "]");
    }
    out.passed = out.violations.empty();
    return out;
  }

  /// Smallness diagnostic, computed once per game.
  const CoercivityDiagnostic& coercivity() const {
    std::call_once(coercivity_once_, [this] {
      CoercivityDiagnostic c;
      c.bounds = sys_->jacobian_bounds();
      c.rho_max = sys_->localizer_bound();
      for (int i = 0; i < sys_->followers(); ++i) {
        c.alpha_max = std::max(c.alpha_max, sys_->scenario().alpha(i));
        c.C_S.push_back(estimate_Ci(*sys_, i).value);
        c.C_S_max = std::max(c.C_S_max, c.C_S.back());
      }
      c.margin = c.bounds.k1 / 2.0 -
                 c.alpha_max * c.bounds.k4 * c.rho_max * sys_->followers() * c.C_S_max * c.C_S_max;
      coercivity_ = c;
    });
    return coercivity_;
  }

 private:
  double cost_from_gap(int i, const FollowerBundle& h, const Vector& gap) const {
    const double control = 0.5 * sys_->jacobian_weighted_inner(h[i], h[i]);
    const Vector weighted = sys_->localizer(i).cwiseProduct(gap);
    const double tracking =
        0.5 * sys_->scenario().alpha(i) * sys_->jacobian_y() * sys_->space().inner(weighted, weighted);
    return control + tracking;
  }

  std::shared_ptr<const ControlSystem> sys_;
  mutable std::once_flag coercivity_once_;
  mutable CoercivityDiagnostic coercivity_;
};

/// Discrete follower feedback -α_i p^k / d_k on the masks of follower i.
inline ControlField follower_feedback(const ControlSystem& sys, int i, const AdjointTrajectory& p) {
  ControlField h = restrict_adjoint(sys, i, p);
  for (int k = 0; k < sys.steps(); ++k) h[k] *= -sys.scenario().alpha(i) / sys.jacobian_ys(k);
  return h;
}

}  // namespace stackheat
