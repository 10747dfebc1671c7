#pragma once

// Leader step: minimize F(g) = ‖R(g) - v^S‖²_K + ε‖g‖² over the reduced map
// R(g) = L_0 g + Σ_i L_i h_i(g), where h(g) is the followers' equilibrium.
// R is affine; its linear part has adjoint ζ ↦ L_0*Φ with Φ the terminal
// value of the coupled leader adjoint.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

#include "stackheat/adjoint_solver.hpp"
#include "stackheat/krylov.hpp"
#include "stackheat/nash_solver.hpp"

namespace stackheat {

struct LeaderOptions {
  double epsilon = 1e-2;
  double tolerance = 1e-8;  // on the relative gradient norm
  int max_iterations = 400;
  double inner_tolerance = 1e-12;
  LeaderAdjointMethod adjoint_method = LeaderAdjointMethod::krylov;
};

struct LeaderSolution {
  double epsilon = 0.0;
  ControlField leader;
  FollowerBundle followers;
  Vector final_state;
  double weighted_residual = 0.0;  // ‖v(S) - v^S‖_{L²(K)}
  double leader_norm = 0.0;
  double objective = 0.0;
  int outer_iterations = 0;
  int nash_iterations = 0;
  std::vector<double> gradient_history;
  bool converged = false;
  std::string warning;
};

/// Residuals of the discrete optimality system at (g, h).
struct OptimalityResiduals {
  double state_equation = 0.0;    // forward recursion, relative
  double adjoint_equation = 0.0;  // backward recursions, relative, max over i
  double adjoint_terminal = 0.0;  // p_i(S) vs D_y ρ_i² (v(S) - v^S)
  double feedback = 0.0;          // h_i vs -α_i p_i / d, relative, max over i
  double feedback_state = 0.0;    // state driven by the feedback controls vs v
};

class LeaderProblem {
 public:
  explicit LeaderProblem(std::shared_ptr<const ControlSystem> system, LeaderOptions options = {})
      : game_(system), sys_(std::move(system)), options_(options) {
    if (!(options_.epsilon > 0.0)) throw ConfigError("epsilon", "penalty must be positive");
    nash_.tolerance = options_.inner_tolerance;
    nash_.diagnostics = false;
  }

  const ControlSystem& system() const { return *sys_; }
  const NashGame& game() const { return game_; }
  const LeaderOptions& options() const { return options_; }

  /// v(S; g, h(g)).
  Vector reduced_map(const ControlField& g, FollowerBundle* followers = nullptr,
                     int* nash_iterations = nullptr) const {
    NashSolveReport report;
    FollowerBundle h = game_.solve_rhs(game_.build_rhs(g), report, nash_);
    if (nash_iterations) *nash_iterations += report.iterations;
    ControlBundle c{g, h};
    Vector v = solve_state(*sys_, c).final_state();
    if (followers) *followers = std::move(h);
    return v;
  }

  /// R(g) - R(0).
  Vector linear_map(const ControlField& g, int* nash_iterations = nullptr) const {
    const Vector z = resolvent_leader(*sys_, g);
    NashSolveReport report;
    const FollowerBundle h = game_.solve_rhs(game_.rhs_from_gap(-z), report, nash_);
    if (nash_iterations) *nash_iterations += report.iterations;
    return z + resolvent_followers(*sys_, h);
  }

  /// Adjoint of `linear_map`: L_0*Φ.
  ControlField linear_adjoint(const Vector& zeta) const {
    LeaderAdjointOptions lo;
    lo.method = options_.adjoint_method;
    lo.tolerance = options_.inner_tolerance;
    lo.max_iterations = 500;
    const LeaderAdjointPair pair = solve_leader_adjoint(*sys_, zeta, lo);
    return restrict_adjoint(*sys_, -1, pair.phi);
  }

  double objective(const ControlField& g) const {
    const Vector r = reduced_map(g) - sys_->target();
    return sys_->space().inner(r, r) + options_.epsilon * sys_->control_inner(g, g);
  }

  /// ∇F(g) = 2 L_0*Φ + 2εg, Φ from the coupled adjoint with ζ = R(g) - v^S.
  ControlField gradient(const ControlField& g) const {
    const Vector zeta = reduced_map(g) - sys_->target();
    ControlField grad = linear_adjoint(zeta);
    grad += options_.epsilon * g;
    grad *= 2.0;
    return grad;
  }

  /// CG on the normal equations (R*R + ε) g = R*(v^S - R(0)).
  LeaderSolution solve() const {
    LeaderSolution out;
    out.epsilon = options_.epsilon;
    int nash_iterations = 0;
    const Vector free_state = reduced_map(sys_->zero_control(), nullptr, &nash_iterations);
    const ControlField rhs = linear_adjoint(sys_->target() - free_state);
    auto normal = [&](const ControlField& g) {
      ControlField y = linear_adjoint(linear_map(g, &nash_iterations));
      y += options_.epsilon * g;
      return y;
    };
    auto dot = [&](const ControlField& a, const ControlField& b) { return sys_->control_inner(a, b); };
    ControlField g = sys_->zero_control();
    KrylovOptions ko;
    ko.tolerance = options_.tolerance;
    ko.max_iterations = options_.max_iterations;
    const KrylovResult r = conjugate_gradient(normal, rhs, g, dot, ko);
    out.outer_iterations = r.iterations;
    out.gradient_history = r.residuals;
    out.converged = r.converged;
    if (!r.converged) out.warning = "outer iteration stopped before the gradient tolerance";

    out.leader = sys_->mask_leader(std::move(g));
    out.final_state = reduced_map(out.leader, &out.followers, &nash_iterations);
    out.nash_iterations = nash_iterations;
    const Vector gap = out.final_state - sys_->target();
    out.weighted_residual = sys_->space().norm(gap);
    out.leader_norm = sys_->control_norm(out.leader);
    out.objective = out.weighted_residual * out.weighted_residual +
                    options_.epsilon * out.leader_norm * out.leader_norm;
    return out;
  }

  /// Residuals of the forward/backward optimality system at a solution.
  OptimalityResiduals optimality_residuals(const LeaderSolution& sol) const {
    OptimalityResiduals res;
    const ControlSystem& sys = *sys_;
    const WeightedSpace& space = sys.space();
    const TimeGrid& tg = sys.time();
    const double ds = tg.step();
    const double theta = tg.theta;
    ControlBundle c{sol.leader, sol.followers};
    const std::vector<Vector> sources = bundle_sources(sys, c);
    const Trajectory v = sys.forward(sources);

    double state_scale = 0.0, state_defect = 0.0;
    for (int k = 0; k < sys.steps(); ++k) {
      const Vector r = (v.states[k + 1] - v.states[k]) / ds +
                       theta * sys.apply_generator(k + 1, v.states[k + 1], false) +
                       (1 - theta) * sys.apply_generator(k, v.states[k], false) -
                       sys.grid().extend_interior(sys.grid().restrict_interior(sources[k]));
      state_defect = std::max(state_defect, space.norm(r));
      state_scale = std::max(state_scale, space.norm(sources[k]));
    }
    res.state_equation = state_defect / std::max(state_scale, 1e-300);

    const Vector gap = v.final_state() - sys.target();
    std::vector<Vector> feedback_sources(sys.steps());
    for (int k = 0; k < sys.steps(); ++k)
      feedback_sources[k] = sol.leader[k].cwiseProduct(sys.leader_mask(k));
    for (int i = 0; i < sys.followers(); ++i) {
      const Vector terminal = sys.jacobian_y() * sys.localizer(i).cwiseAbs2().cwiseProduct(gap);
      const AdjointTrajectory p = sys.backward(terminal);
      res.adjoint_terminal = std::max(
          res.adjoint_terminal,
          space.norm(p.terminal() - terminal) / std::max(space.norm(terminal), 1e-300));

      double adj_defect = 0.0, adj_scale = space.norm(p.terminal());
      for (int k = 0; k < sys.steps(); ++k) {
        // E_{k+1}^† p^k = G_{k+1}^† p^{k+1}, with p^{k+1} replaced by the terminal datum at k = m-1
        const bool last = k + 1 == sys.steps();
        const Vector& next = p.states[k + 1];
        Vector r = (p.states[k] - next) / ds + theta * sys.apply_generator(k + 1, p.states[k], true);
        if (!last) r += (1 - theta) * sys.apply_generator(k + 1, next, true);
        adj_defect = std::max(adj_defect, space.norm(r));
        adj_scale = std::max(adj_scale, space.norm(p.states[k]) / ds);
      }
      res.adjoint_equation = std::max(res.adjoint_equation, adj_defect / std::max(adj_scale, 1e-300));

      const ControlField fb = follower_feedback(sys, i, p);
      const double scale = std::max(sys.control_norm(sol.followers[i]), sys.control_norm(fb));
      if (scale > 0.0)
        res.feedback = std::max(res.feedback,
                                sys.control_norm(sys.mask_follower(i, sol.followers[i]) - fb) / scale);
      for (int k = 0; k < sys.steps(); ++k) feedback_sources[k] += fb[k];
    }
    const Trajectory w = sys.forward(feedback_sources);
    double defect = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < w.states.size(); ++k) {
      defect = std::max(defect, space.norm(w.states[k] - v.states[k]));
      scale = std::max(scale, space.norm(v.states[k]));
    }
    res.feedback_state = defect / std::max(scale, 1e-300);
    return res;
  }

 private:
  NashGame game_;
  std::shared_ptr<const ControlSystem> sys_;
  LeaderOptions options_;
  NashOptions nash_;
};

/// One row of an ε-sweep.
struct SweepEntry {
  double epsilon = 0.0;
  double weighted_residual = 0.0;
  double physical_residual = 0.0;   // ‖u(T) - u^T‖_{L²}
  double physical_bound = 0.0;      // ((1+T)^{-N/2})^{1/2} ‖v(S) - v^S‖_{L²(K)}
  bool inequality_holds = false;
  double leader_norm = 0.0;
  int nash_iterations = 0;
  int outer_iterations = 0;
  bool converged = false;
  OptimalityResiduals optimality;
};

struct ControllabilityReport {
  std::vector<SweepEntry> sweep;
  double target_norm = 0.0;  // ‖v^S‖_{L²(K)}
  std::optional<CoercivityDiagnostic> coercivity;
  std::vector<LeaderSolution> solutions;  // aligned with `sweep`

  /// Weighted residuals strictly decreasing along the sweep.
  bool strictly_decreasing() const {
    for (std::size_t k = 1; k < sweep.size(); ++k)
      if (!(sweep[k].weighted_residual < sweep[k - 1].weighted_residual)) return false;
    return true;
  }
};

/// ‖u(T) - u^T‖_{L²} on the physical nodes x = sqrt(1+T) y, with u(T) pulled
/// back from v(S) and u^T sampled directly.
inline double physical_residual(const ControlSystem& sys, const Vector& final_state) {
  const Grid& grid = sys.grid();
  const PhysicalScenario& phys = sys.scenario().physical();
  const double T = phys.horizon;
  const double stretch = std::sqrt(1.0 + T);
  const double pull = std::pow(1.0 + T, -scaling::state(sys.dim()));
  const double volume = std::pow(stretch * grid.spacing(), grid.dim());
  double total = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    auto y = grid.point(j);
    std::array<double, 2> x{};
    for (int a = 0; a < grid.dim(); ++a) x[a] = stretch * y[a];
    const double u = pull * final_state[j];
    const double d = u - phys.target(std::span<const double>(x.data(), grid.dim()), T);
    total += grid.trapezoid_factor(j) * d * d;
  }
  return std::sqrt(total * volume);
}

/// ε-sweep of the leader problem plus the physical-space check, run on up to
/// `jobs` threads. Entries are independent, so results do not depend on `jobs`.
inline ControllabilityReport controllability_experiment(std::shared_ptr<const ControlSystem> sys,
                                                        const std::vector<double>& epsilons,
                                                        LeaderOptions options = {}, int jobs = 1,
                                                        bool with_diagnostics = true) {
  ControllabilityReport report;
  report.target_norm = sys->space().norm(sys->target());
  if (!std::isfinite(report.target_norm) || report.target_norm > 1e150)
    throw ConfigError("target", "target is not representable in L2(K) on this grid");
  if (with_diagnostics && sys->followers() > 0)
    report.coercivity = NashGame(sys).coercivity();

  report.sweep.resize(epsilons.size());
  report.solutions.resize(epsilons.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_lock;
  auto worker = [&] {
    for (std::size_t e = next++; e < epsilons.size(); e = next++) {
      try {
        LeaderOptions opt = options;
        opt.epsilon = epsilons[e];
        const LeaderProblem problem(sys, opt);
        LeaderSolution sol = problem.solve();
        SweepEntry& row = report.sweep[e];
        row.epsilon = epsilons[e];
        row.weighted_residual = sol.weighted_residual;
        row.physical_residual = physical_residual(*sys, sol.final_state);
        row.physical_bound =
            std::pow(1.0 + sys->scenario().physical_horizon(), -0.25 * sys->dim()) * sol.weighted_residual;
        row.inequality_holds = row.physical_residual <= row.physical_bound;
        row.leader_norm = sol.leader_norm;
        row.nash_iterations = sol.nash_iterations;
        row.outer_iterations = sol.outer_iterations;
        row.converged = sol.converged;
        row.optimality = problem.optimality_residuals(sol);
        report.solutions[e] = std::move(sol);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_lock);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(jobs, static_cast<int>(epsilons.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return report;
}

}  // namespace stackheat
