#pragma once

// Discretized similarity-variable control system.
//
// Forward θ-scheme, step k -> k+1 on interior unknowns:
//   (I + θΔs P_{k+1}) v^{k+1} = (I - (1-θ)Δs P_k) v^k + Δs f_k,
//   P(s) = L + A(·,s) + B(·,s)·∇ - N/2,
// with f_k the source on (s_k, s_{k+1}) (controls are piecewise constant in
// time). The backward sweep applies the exact transpose of every step with
// respect to the trapezoidal L²(K) product, P^† = W^{-1} P^T W, so that
//   (ξ, v^m)_K = Σ_k Δs (p^k, f_k)_K + (p_init, v^0)_K
// holds to roundoff.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>

#include "stackheat/errors.hpp"
#include "stackheat/scenario.hpp"
#include "stackheat/weighted_space.hpp"

namespace stackheat {

struct TimeGrid {
  double horizon = 1.0;  // S
  int steps = 128;       // m
  double theta = 0.5;

  double step() const { return horizon / steps; }
  double time(int k) const { return k == steps ? horizon : k * step(); }

  void validate() const {
    if (steps < 2) throw ConfigError("steps", "need at least 2 time steps");
    if (theta < 0.5 || theta > 1.0) throw ConfigError("theta", "must lie in [0.5, 1]");
    if (!(horizon > 0.0)) throw ConfigError("T", "horizon must be positive");
  }
};

struct SolverOptions {
  bool upwind = false;  // first-order upwinding of B·∇ instead of centered
  std::size_t factor_cache_bytes = std::size_t{256} << 20;
  double iterative_tolerance = 1e-14;
};

/// Control piecewise constant in time: one full-grid vector per step.
class ControlField {
 public:
  ControlField() = default;
  ControlField(std::size_t steps, std::size_t nodes) : values_(steps, Vector::Zero(nodes)) {}

  std::size_t steps() const { return values_.size(); }
  Vector& operator[](std::size_t k) { return values_[k]; }
  const Vector& operator[](std::size_t k) const { return values_[k]; }

  ControlField& operator+=(const ControlField& o) {
    for (std::size_t k = 0; k < values_.size(); ++k) values_[k] += o.values_[k];
    return *this;
  }
  ControlField& operator-=(const ControlField& o) {
    for (std::size_t k = 0; k < values_.size(); ++k) values_[k] -= o.values_[k];
    return *this;
  }
  ControlField& operator*=(double c) {
    for (auto& v : values_) v *= c;
    return *this;
  }
  friend ControlField operator*(double c, ControlField f) { return f *= c; }
  friend ControlField operator+(ControlField a, const ControlField& b) { return a += b; }
  friend ControlField operator-(ControlField a, const ControlField& b) { return a -= b; }

 private:
  std::vector<Vector> values_;
};

/// The followers' controls (h_1, ..., h_n).
struct FollowerBundle {
  std::vector<ControlField> parts;

  std::size_t size() const { return parts.size(); }
  ControlField& operator[](std::size_t i) { return parts[i]; }
  const ControlField& operator[](std::size_t i) const { return parts[i]; }

  FollowerBundle& operator+=(const FollowerBundle& o) {
    for (std::size_t i = 0; i < parts.size(); ++i) parts[i] += o.parts[i];
    return *this;
  }
  FollowerBundle& operator-=(const FollowerBundle& o) {
    for (std::size_t i = 0; i < parts.size(); ++i) parts[i] -= o.parts[i];
    return *this;
  }
  FollowerBundle& operator*=(double c) {
    for (auto& p : parts) p *= c;
    return *this;
  }
  friend FollowerBundle operator*(double c, FollowerBundle f) { return f *= c; }
  friend FollowerBundle operator+(FollowerBundle a, const FollowerBundle& b) { return a += b; }
  friend FollowerBundle operator-(FollowerBundle a, const FollowerBundle& b) { return a -= b; }
};

/// Leader control g and follower controls h.
struct ControlBundle {
  ControlField leader;
  FollowerBundle followers;
};

/// Forward states v^0..v^m (full grid).
struct Trajectory {
  std::vector<Vector> states;
  TimeGrid time;
  std::string scenario_hash;

  const Vector& final_state() const { return states.back(); }
};

/// Backward solution: interval values p^0..p^{m-1} (p^k pairs with the
/// source on step k), terminal datum p^m, and the sensitivity to v^0.
struct AdjointTrajectory {
  std::vector<Vector> states;  // m + 1 entries, states[m] = terminal datum
  Vector initial;

  const Vector& terminal() const { return states.back(); }
};

namespace detail {

struct StepOperators {
  using ColMatrix = Eigen::SparseMatrix<double>;
  SparseMatrix explicit_part;          // I - (1-θ)Δs P(s)
  SparseMatrix explicit_adjoint;       // its W-transpose
  ColMatrix implicit_part;             // I + θΔs P(s)
  ColMatrix implicit_adjoint;
  std::unique_ptr<Eigen::SparseLU<ColMatrix>> lu;
  std::unique_ptr<Eigen::SparseLU<ColMatrix>> lu_adjoint;
};

}  // namespace detail

class ControlSystem {
 public:
  ControlSystem(SimilarityScenario scenario, Grid grid, TimeGrid time,
                SolverOptions options = {})
      : scenario_(std::move(scenario)),
        space_(std::move(grid)),
        time_(time),
        options_(options) {
    time_.validate();
    if (space_.grid().dim() != scenario_.dim())
      throw ConfigError("grid", "grid dimension differs from scenario dim");
    if (std::abs(time_.horizon - scenario_.horizon()) > 1e-12 * scenario_.horizon())
      throw ConfigError("T", "time grid horizon must equal log(T+1)");
    build_geometry();
    build_operators();
  }

  ControlSystem(const ControlSystem&) = delete;
  ControlSystem& operator=(const ControlSystem&) = delete;

  const SimilarityScenario& scenario() const { return scenario_; }
  const Grid& grid() const { return space_.grid(); }
  const WeightedSpace& space() const { return space_; }
  const TimeGrid& time() const { return time_; }
  const SolverOptions& options() const { return options_; }
  int dim() const { return scenario_.dim(); }
  int followers() const { return scenario_.followers(); }
  int steps() const { return time_.steps; }

  const Vector& leader_mask(int k) const { return leader_masks_[k]; }
  const Vector& follower_mask(int i, int k) const { return follower_masks_[i][k]; }
  /// rho_i on the grid.
  const Vector& localizer(int i) const { return localizers_[i]; }
  /// v^S on the grid (zero on the boundary layer).
  const Vector& target() const { return target_; }
  /// |D_{y,s}| at the start of step k.
  double jacobian_ys(int k) const { return jacobian_ys_[k]; }
  double jacobian_y() const { return scenario_.jacobian_y(); }
  JacobianBounds jacobian_bounds() const { return scenario_.jacobian_bounds(); }
  /// sup |A| and sup |B| over grid nodes and grid times.
  double bound_A() const { return bound_a_; }
  double bound_B() const { return bound_b_; }
  /// max_i ‖rho_i‖_∞ on the grid.
  double localizer_bound() const {
    double r = 0.0;
    for (const auto& l : localizers_) r = std::max(r, l.cwiseAbs().maxCoeff());
    return r;
  }
  bool caches_factorizations() const { return cached_; }

  void set_scenario_hash(std::string hash) { scenario_hash_ = std::move(hash); }
  const std::string& scenario_hash() const { return scenario_hash_; }

  // control-space geometry -------------------------------------------------

  ControlField zero_control() const { return ControlField(steps(), grid().size()); }

  FollowerBundle zero_followers() const {
    return FollowerBundle{std::vector<ControlField>(followers(), zero_control())};
  }

  ControlBundle zero_bundle() const { return {zero_control(), zero_followers()}; }

  /// L²(0,S; L²(K)) product of piecewise-constant controls.
  double control_inner(const ControlField& a, const ControlField& b) const {
    double total = 0.0;
    for (int k = 0; k < steps(); ++k) total += space_.inner(a[k], b[k]);
    return total * time_.step();
  }

  double control_norm(const ControlField& a) const { return std::sqrt(control_inner(a, a)); }

  /// Product on H = (L²(0,S;L²(K)))^n.
  double bundle_inner(const FollowerBundle& a, const FollowerBundle& b) const {
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += control_inner(a[i], b[i]);
    return total;
  }

  double bundle_norm(const FollowerBundle& a) const { return std::sqrt(bundle_inner(a, a)); }

  /// Σ_k Δs |D_{y,s}(s_k)| (a^k, b^k)_K.
  double jacobian_weighted_inner(const ControlField& a, const ControlField& b) const {
    double total = 0.0;
    for (int k = 0; k < steps(); ++k) total += jacobian_ys_[k] * space_.inner(a[k], b[k]);
    return total * time_.step();
  }

  ControlField mask_leader(ControlField g) const {
    for (int k = 0; k < steps(); ++k) g[k] = g[k].cwiseProduct(leader_masks_[k]);
    return g;
  }

  ControlField mask_follower(int i, ControlField h) const {
    for (int k = 0; k < steps(); ++k) h[k] = h[k].cwiseProduct(follower_masks_[i][k]);
    return h;
  }

  FollowerBundle mask_followers(FollowerBundle h) const {
    for (int i = 0; i < followers(); ++i) h[i] = mask_follower(i, std::move(h[i]));
    return h;
  }

  /// Number of control degrees of freedom of the leader / follower i.
  std::size_t leader_dofs() const { return count_dofs(leader_masks_); }
  std::size_t follower_dofs(int i) const { return count_dofs(follower_masks_[i]); }

  // sweeps -------------------------------------------------------------------

  /// Forward θ-scheme. `sources[k]` is the full-grid source on step k (an empty
  /// vector means zero). Integrates steps 0..last_step-1 (default all).
  Trajectory forward(const std::vector<Vector>& sources, const Vector* initial = nullptr,
                     int last_step = -1) const {
    const int last = last_step < 0 ? steps() : last_step;
    const double ds = time_.step();
    Trajectory out;
    out.time = time_;
    out.scenario_hash = scenario_hash_;
    out.states.reserve(last + 1);
    Vector x = initial ? grid().restrict_interior(*initial) : Vector::Zero(grid().interior_size());
    out.states.push_back(grid().extend_interior(x));
    for (int k = 0; k < last; ++k) {
      Vector rhs = apply_explicit(k, x, false);
      if (k < static_cast<int>(sources.size()) && sources[k].size() > 0)
        rhs += ds * grid().restrict_interior(sources[k]);
      x = solve_implicit(k + 1, rhs, false);
      out.states.push_back(grid().extend_interior(x));
    }
    return out;
  }

  /// One θ-step from v^k (full grid) with source on step k.
  Vector advance(int k, const Vector& state, const Vector& source) const {
    Vector rhs = apply_explicit(k, grid().restrict_interior(state), false);
    if (source.size() > 0) rhs += time_.step() * grid().restrict_interior(source);
    return grid().extend_interior(solve_implicit(k + 1, rhs, false));
  }

  /// Exact transpose of `forward` with terminal datum `terminal` placed at
  /// step `last_step` (default m).
  AdjointTrajectory backward(const Vector& terminal, int last_step = -1) const {
    const int last = last_step < 0 ? steps() : last_step;
    AdjointTrajectory out;
    out.states.assign(last + 1, Vector());
    Vector r = grid().restrict_interior(terminal);
    out.states[last] = grid().extend_interior(r);
    for (int k = last - 1; k >= 0; --k) {
      Vector q = solve_implicit(k + 1, r, true);
      out.states[k] = grid().extend_interior(q);
      r = apply_explicit(k, q, true);
    }
    out.initial = grid().extend_interior(r);
    return out;
  }

  /// P(s_k) applied to a full-grid vector (interior rows), or its W-transpose.
  Vector apply_generator(int k, const Vector& v, bool adjoint) const {
    const SparseMatrix P = generator(time_.time(k));
    const Vector x = grid().restrict_interior(v);
    if (!adjoint) return grid().extend_interior(P * x);
    return grid().extend_interior(w_adjoint(P) * x);
  }

  /// Interior matrix of P(s) = L + A + B·∇ - N/2.
  SparseMatrix generator(double s) const {
    const Grid& g = grid();
    const std::size_t m = g.interior_size();
    const int n = g.points();
    const double h = g.spacing();
    SparseMatrix P = L_;
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(m * (1 + 2 * g.dim()));
    std::array<double, 2> b{};
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t j = g.interior_to_full(k);
      const auto y = g.point(j);
      const std::span<const double> yp(y.data(), g.dim());
      entries.emplace_back(k, k, scenario_.potential_a(yp, s) - 0.5 * g.dim());
      scenario_.potential_b(yp, s, std::span<double>(b.data(), g.dim()));
      const auto ij = g.unravel(j);
      for (int a = 0; a < g.dim(); ++a) {
        if (b[a] == 0.0) continue;
        const std::size_t st = (g.dim() == 2 && a == 0) ? n - 2 : 1;
        const bool has_plus = ij[a] + 1 < n - 1;
        const bool has_minus = ij[a] - 1 > 0;
        if (!options_.upwind) {
          if (has_plus) entries.emplace_back(k, k + st, b[a] / (2 * h));
          if (has_minus) entries.emplace_back(k, k - st, -b[a] / (2 * h));
        } else if (b[a] > 0) {
          entries.emplace_back(k, k, b[a] / h);
          if (has_minus) entries.emplace_back(k, k - st, -b[a] / h);
        } else {
          entries.emplace_back(k, k, -b[a] / h);
          if (has_plus) entries.emplace_back(k, k + st, b[a] / h);
        }
      }
    }
    SparseMatrix extra(m, m);
    extra.setFromTriplets(entries.begin(), entries.end());
    P += extra;
    return P;
  }

 private:
  static std::size_t count_dofs(const std::vector<Vector>& masks) {
    std::size_t total = 0;
    for (const auto& m : masks) total += static_cast<std::size_t>(m.sum());
    return total;
  }

  void build_geometry() {
    const Grid& g = grid();
    const int m = steps();
    const double margin = scenario_.physical().rho_margin * g.spacing();
    leader_masks_.resize(m);
    follower_masks_.assign(followers(), std::vector<Vector>(m));
    for (int k = 0; k < m; ++k) {
      const double s = time_.time(k);
      const Box leader = scenario_.leader_region(s);
      leader_masks_[k] = mask_of(leader);
      for (int i = 0; i < followers(); ++i)
        follower_masks_[i][k] = mask_of(scenario_.follower_region(i, s));
    }
    localizers_.resize(followers());
    for (int i = 0; i < followers(); ++i)
      localizers_[i] = g.sample([&](std::span<const double> y) {
        return scenario_.localizer(i, y, margin);
      });
    target_ = g.sample([&](std::span<const double> y) { return scenario_.target(y); });
    for (std::size_t j = 0; j < g.size(); ++j)
      if (g.on_boundary(j)) target_[j] = 0.0;
    jacobian_ys_.resize(m + 1);
    for (int k = 0; k <= m; ++k) jacobian_ys_[k] = scenario_.jacobian_ys(time_.time(k));

    std::array<double, 2> b{};
    for (int k = 0; k <= m; ++k) {
      const double s = time_.time(k);
      for (std::size_t j = 0; j < g.size(); ++j) {
        const auto y = g.point(j);
        const std::span<const double> yp(y.data(), g.dim());
        bound_a_ = std::max(bound_a_, std::abs(scenario_.potential_a(yp, s)));
        scenario_.potential_b(yp, s, std::span<double>(b.data(), g.dim()));
        double b2 = 0.0;
        for (int a = 0; a < g.dim(); ++a) b2 += b[a] * b[a];
        bound_b_ = std::max(bound_b_, std::sqrt(b2));
      }
    }
  }

  Vector mask_of(const Box& box) const {
    const Grid& g = grid();
    Vector mask = Vector::Zero(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (g.on_boundary(j)) continue;
      const auto y = g.point(j);
      if (box.contains(std::span<const double>(y.data(), g.dim()))) mask[j] = 1.0;
    }
    return mask;
  }

  SparseMatrix w_adjoint(const SparseMatrix& P) const {
    // (W^{-1} P^T W)_{ji} = P_{ij} W_i / W_j
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(P.nonZeros());
    for (int i = 0; i < P.outerSize(); ++i)
      for (SparseMatrix::InnerIterator it(P, i); it; ++it)
        entries.emplace_back(it.col(), i, it.value() * wint_[i] / wint_[it.col()]);
    SparseMatrix out(P.cols(), P.rows());
    out.setFromTriplets(entries.begin(), entries.end());
    return out;
  }

  std::shared_ptr<detail::StepOperators> make_step(double s, bool factor) const {
    const double ds = time_.step();
    const double theta = time_.theta;
    const SparseMatrix P = generator(s);
    const SparseMatrix Pt = w_adjoint(P);
    const std::size_t m = grid().interior_size();
    SparseMatrix I(m, m);
    I.setIdentity();
    auto op = std::make_shared<detail::StepOperators>();
    op->explicit_part = I - (1.0 - theta) * ds * P;
    op->explicit_adjoint = I - (1.0 - theta) * ds * Pt;
    op->implicit_part = detail::StepOperators::ColMatrix(I + theta * ds * P);
    op->implicit_adjoint = detail::StepOperators::ColMatrix(I + theta * ds * Pt);
    if (factor) {
      op->lu = std::make_unique<Eigen::SparseLU<detail::StepOperators::ColMatrix>>();
      op->lu->compute(op->implicit_part);
      op->lu_adjoint = std::make_unique<Eigen::SparseLU<detail::StepOperators::ColMatrix>>();
      op->lu_adjoint->compute(op->implicit_adjoint);
      if (op->lu->info() != Eigen::Success || op->lu_adjoint->info() != Eigen::Success)
        throw SolverError("implicit step factorization failed", 1.0);
    }
    return op;
  }

  void build_operators() {
    L_ = space_.interior_L();
    wint_ = space_.interior_mass();
    const int m = steps();
    const bool time_independent = scenario_.potentials_vanish();
    const std::size_t distinct = time_independent ? 1 : static_cast<std::size_t>(m + 1);
    const std::size_t unknowns = grid().interior_size();
    const std::size_t band = grid().dim() == 1 ? 3 : 2 * (grid().points() - 2) + 1;
    const std::size_t estimate = distinct * unknowns * (4 * 5 + 2 * band) * 16;
    cached_ = estimate <= options_.factor_cache_bytes;
    if (!cached_) return;
    steps_.resize(m + 1);
    if (time_independent) {
      const auto op = make_step(0.0, true);
      for (auto& s : steps_) s = op;
      return;
    }
    for (int k = 0; k <= m; ++k) steps_[k] = make_step(time_.time(k), true);
  }

  Vector apply_explicit(int k, const Vector& x, bool adjoint) const {
    if (time_.theta == 1.0) return x;
    if (cached_) return adjoint ? steps_[k]->explicit_adjoint * x : steps_[k]->explicit_part * x;
    const auto op = make_step(time_.time(k), false);
    return adjoint ? op->explicit_adjoint * x : op->explicit_part * x;
  }

  Vector solve_implicit(int k, const Vector& rhs, bool adjoint) const {
    if (cached_) {
      const auto& op = *steps_[k];
      return adjoint ? op.lu_adjoint->solve(rhs) : op.lu->solve(rhs);
    }
    const auto op = make_step(time_.time(k), false);
    Eigen::BiCGSTAB<detail::StepOperators::ColMatrix, Eigen::DiagonalPreconditioner<double>>
        solver;
    solver.setTolerance(options_.iterative_tolerance);
    solver.setMaxIterations(2000);
    solver.compute(adjoint ? op->implicit_adjoint : op->implicit_part);
    Vector x = solver.solve(rhs);
    if (solver.info() != Eigen::Success)
      throw SolverError("implicit step did not converge", solver.error());
    return x;
  }

  SimilarityScenario scenario_;
  WeightedSpace space_;
  TimeGrid time_;
  SolverOptions options_;
  std::string scenario_hash_;

  std::vector<Vector> leader_masks_;
  std::vector<std::vector<Vector>> follower_masks_;
  std::vector<Vector> localizers_;
  Vector target_;
  std::vector<double> jacobian_ys_;
  double bound_a_ = 0.0;
  double bound_b_ = 0.0;

  SparseMatrix L_;
  Vector wint_;
  bool cached_ = false;
  std::vector<std::shared_ptr<detail::StepOperators>> steps_;
};

/// Control values at step k on the physical nodes x = e^{s_k/2} y, t = e^{s_k} - 1.
struct PhysicalSlice {
  double time = 0.0;
  double stretch = 1.0;
  Vector values;
};

/// f(x,t) = (1+t)^{-(N+2)/2} g(y,s) at coincident nodes.
inline std::vector<PhysicalSlice> to_physical_controls(const ControlSystem& sys,
                                                       const ControlField& g) {
  const double p = scaling::control(sys.dim());
  std::vector<PhysicalSlice> out(g.steps());
  for (std::size_t k = 0; k < g.steps(); ++k) {
    const double s = sys.time().time(static_cast<int>(k));
    const double t = physical_time(s);
    out[k] = {t, std::exp(0.5 * s), g[k] * std::pow(1.0 + t, -p)};
  }
  return out;
}

/// Inverse of `to_physical_controls`.
inline ControlField from_physical_controls(const ControlSystem& sys,
                                           const std::vector<PhysicalSlice>& f) {
  const double p = scaling::control(sys.dim());
  ControlField g(f.size(), sys.grid().size());
  for (std::size_t k = 0; k < f.size(); ++k)
    g[k] = f[k].values * std::exp(p * similarity_time(f[k].time));
  return g;
}

/// Build a control system from a physical scenario with the given grids.
inline std::shared_ptr<const ControlSystem> make_control_system(
    const PhysicalScenario& physical, const Grid& grid, int steps, double theta = 0.5,
    SolverOptions options = {}) {
  SimilarityScenario sim(physical);
  TimeGrid time{sim.horizon(), steps, theta};
  return std::make_shared<const ControlSystem>(std::move(sim), grid, time, options);
}

}  // namespace stackheat
