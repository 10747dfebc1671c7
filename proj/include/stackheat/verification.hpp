#pragma once

// Independent oracles: dense assembly of the matrix-free operators on tiny
// instances, a direct Nash solve, the weighted-inequality suite, and
// self-convergence studies.

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "stackheat/leader_solver.hpp"
#include "stackheat/nash_solver.hpp"
#include "stackheat/weighted_space.hpp"

namespace stackheat {

using DenseMatrix = Eigen::MatrixXd;

struct DenseLimits {
  std::size_t nodes = 64;  // n^N
  int steps = 8;
  int followers = 3;
};

/// A control degree of freedom: node j during step k.
struct ControlDof {
  int step;
  std::size_t node;
};

/// Explicit matrices of the operators in coordinates: state = interior
/// nodes, controls = (step, node) pairs inside the masks.
struct DenseInstance {
  std::shared_ptr<const ControlSystem> system;
  std::vector<ControlDof> leader_dofs;
  std::vector<std::vector<ControlDof>> follower_dofs;
  Vector state_weight;                 // W on interior nodes
  Vector leader_weight;                // Δs W_j per leader dof
  std::vector<Vector> follower_weight;
  DenseMatrix L0;
  std::vector<DenseMatrix> Li;
  std::vector<DenseMatrix> Li_adjoint;
  DenseMatrix nash;                    // 𝔏 on the stacked follower dofs
  DenseMatrix reduced;                 // linear part of the reduced leader map (if assembled)

  std::size_t follower_offset(int i) const {
    std::size_t off = 0;
    for (int q = 0; q < i; ++q) off += follower_dofs[q].size();
    return off;
  }
  std::size_t follower_total() const { return follower_offset(static_cast<int>(follower_dofs.size())); }

  Vector stacked_follower_weight() const {
    Vector w(follower_total());
    for (std::size_t i = 0, off = 0; i < follower_weight.size(); off += follower_weight[i].size(), ++i)
      w.segment(off, follower_weight[i].size()) = follower_weight[i];
    return w;
  }

  /// Coordinates of a control field on a dof list.
  static Vector gather(const ControlField& c, const std::vector<ControlDof>& dofs) {
    Vector out(dofs.size());
    for (std::size_t d = 0; d < dofs.size(); ++d) out[d] = c[dofs[d].step][dofs[d].node];
    return out;
  }

  ControlField scatter(const Vector& x, const std::vector<ControlDof>& dofs) const {
    ControlField c = system->zero_control();
    for (std::size_t d = 0; d < dofs.size(); ++d) c[dofs[d].step][dofs[d].node] = x[d];
    return c;
  }

  Vector gather_followers(const FollowerBundle& h) const {
    Vector out(follower_total());
    for (std::size_t i = 0; i < follower_dofs.size(); ++i)
      out.segment(follower_offset(static_cast<int>(i)), follower_dofs[i].size()) =
          gather(h[i], follower_dofs[i]);
    return out;
  }

  FollowerBundle scatter_followers(const Vector& x) const {
    FollowerBundle h = system->zero_followers();
    for (std::size_t i = 0; i < follower_dofs.size(); ++i)
      h[i] = scatter(x.segment(follower_offset(static_cast<int>(i)), follower_dofs[i].size()),
                     follower_dofs[i]);
    return h;
  }
};

namespace detail {

inline std::vector<ControlDof> mask_dofs(const ControlSystem& sys, int i) {
  std::vector<ControlDof> dofs;
  for (int k = 0; k < sys.steps(); ++k) {
    const Vector& mask = i < 0 ? sys.leader_mask(k) : sys.follower_mask(i, k);
    for (Eigen::Index j = 0; j < mask.size(); ++j)
      if (mask[j] != 0.0) dofs.push_back({k, static_cast<std::size_t>(j)});
  }
  return dofs;
}

}  // namespace detail

/// Columns come from applying the matrix-free operators to unit vectors.
inline DenseInstance assemble_dense(std::shared_ptr<const ControlSystem> sys,
                                    bool with_reduced_map = false, DenseLimits limits = {}) {
  if (sys->grid().size() > limits.nodes || sys->steps() > limits.steps ||
      sys->followers() > limits.followers)
    throw InstanceTooLarge("assemble_dense: instance exceeds n^N <= " +
                           std::to_string(limits.nodes) + ", m <= " + std::to_string(limits.steps) +
                           ", followers <= " + std::to_string(limits.followers));
  const ControlSystem& s = *sys;
  const Grid& grid = s.grid();
  const std::size_t ns = grid.interior_size();
  DenseInstance d;
  d.system = sys;
  d.state_weight = s.space().interior_mass();
  d.leader_dofs = detail::mask_dofs(s, -1);
  const Vector& mass = s.space().mass();
  const double ds = s.time().step();
  auto weights = [&](const std::vector<ControlDof>& dofs) {
    Vector w(dofs.size());
    for (std::size_t q = 0; q < dofs.size(); ++q) w[q] = ds * mass[dofs[q].node];
    return w;
  };
  d.leader_weight = weights(d.leader_dofs);

  auto unit_control = [&](const ControlDof& dof) {
    ControlField c = s.zero_control();
    c[dof.step][dof.node] = 1.0;
    return c;
  };
  d.L0.resize(ns, d.leader_dofs.size());
  for (std::size_t q = 0; q < d.leader_dofs.size(); ++q)
    d.L0.col(q) = grid.restrict_interior(resolvent_leader(s, unit_control(d.leader_dofs[q])));

  const int n = s.followers();
  for (int i = 0; i < n; ++i) {
    d.follower_dofs.push_back(detail::mask_dofs(s, i));
    const auto& dofs = d.follower_dofs.back();
    d.follower_weight.push_back(weights(dofs));
    DenseMatrix Li(ns, dofs.size());
    for (std::size_t q = 0; q < dofs.size(); ++q)
      Li.col(q) = grid.restrict_interior(resolvent_Li(s, i, unit_control(dofs[q])));
    d.Li.push_back(std::move(Li));
    DenseMatrix La(dofs.size(), ns);
    for (std::size_t r = 0; r < ns; ++r) {
      Vector xi = Vector::Zero(ns);
      xi[r] = 1.0;
      La.col(r) = DenseInstance::gather(adjoint_of_Li(s, i, grid.extend_interior(xi)), dofs);
    }
    d.Li_adjoint.push_back(std::move(La));
  }

  const NashGame game(sys);
  const std::size_t total = d.follower_total();
  d.nash.resize(total, total);
  for (std::size_t c = 0; c < total; ++c) {
    Vector e = Vector::Zero(total);
    e[c] = 1.0;
    d.nash.col(c) = d.gather_followers(game.apply(d.scatter_followers(e)));
  }

  if (with_reduced_map) {
    LeaderOptions lo;
    lo.epsilon = 1.0;
    const LeaderProblem problem(sys, lo);
    d.reduced.resize(ns, d.leader_dofs.size());
    for (std::size_t q = 0; q < d.leader_dofs.size(); ++q)
      d.reduced.col(q) = grid.restrict_interior(problem.linear_map(unit_control(d.leader_dofs[q])));
  }
  return d;
}

/// W_out^{-1} A^T W_in: the matrix of the adjoint of A for weighted products.
inline DenseMatrix weighted_transpose(const DenseMatrix& A, const Vector& w_in, const Vector& w_out) {
  return w_out.cwiseInverse().asDiagonal() * A.transpose() * w_in.asDiagonal();
}

/// Smallest eigenvalue of the ℋ-symmetric part of 𝔏, i.e. inf ⟨𝔏h,h⟩/‖h‖².
inline double nash_numerical_range_min(const DenseInstance& d) {
  const Vector w = d.stacked_follower_weight();
  const Vector sq = w.cwiseSqrt();
  const DenseMatrix M = sq.asDiagonal() * d.nash * sq.cwiseInverse().asDiagonal();
  const DenseMatrix sym = 0.5 * (M + M.transpose());
  Eigen::SelfAdjointEigenSolver<DenseMatrix> eig(sym, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

struct BruteForceNash {
  FollowerBundle followers;
  double reciprocal_condition = 0.0;
};

/// Direct LU solve of the stacked system 𝔏h = ξ built from dense L_i, L_i*.
inline BruteForceNash brute_force_nash(const DenseInstance& d, const ControlField& g) {
  const ControlSystem& s = *d.system;
  const Grid& grid = s.grid();
  const std::size_t total = d.follower_total();
  const int n = s.followers();
  // ξ_i = α_i L_i*(ρ_i² D_y (v^S - L_0 g)) and 𝔏 from the dense blocks
  const Vector gap = grid.restrict_interior(s.target()) -
                     d.L0 * DenseInstance::gather(g, d.leader_dofs);
  Vector xi(total);
  DenseMatrix A = DenseMatrix::Zero(total, total);
  for (int i = 0; i < n; ++i) {
    const std::size_t oi = d.follower_offset(i);
    const std::size_t ni = d.follower_dofs[i].size();
    const double a = s.scenario().alpha(i);
    const Vector rho2 = grid.restrict_interior(s.localizer(i)).cwiseAbs2() * s.jacobian_y();
    const DenseMatrix adjoint = weighted_transpose(d.Li[i], d.state_weight, d.follower_weight[i]);
    xi.segment(oi, ni) = a * adjoint * rho2.cwiseProduct(gap);
    for (std::size_t q = 0; q < ni; ++q)
      A(oi + q, oi + q) += s.jacobian_ys(d.follower_dofs[i][q].step);
    for (int j = 0; j < n; ++j) {
      const std::size_t oj = d.follower_offset(j);
      A.block(oi, oj, ni, d.follower_dofs[j].size()) += a * adjoint * rho2.asDiagonal() * d.Li[j];
    }
  }
  BruteForceNash out;
  if (total == 0) {
    out.followers = s.zero_followers();
    out.reciprocal_condition = 1.0;
    return out;
  }
  Eigen::PartialPivLU<DenseMatrix> lu(A);
  out.reciprocal_condition = lu.rcond();
  if (!(out.reciprocal_condition > 1e-14))
    throw SolverError("brute_force_nash: singular system (rcond " +
                          std::to_string(out.reciprocal_condition) + ")",
                      out.reciprocal_condition);
  out.followers = d.scatter_followers(lu.solve(xi));
  return out;
}

// ---------------------------------------------------------------------------
// weighted inequalities

/// Sum of 1..5 Gaussian bumps, centers in [-R/2, R/2]^N, widths in [0.5, 2],
/// zero on the boundary layer.
inline Vector random_smooth_field(const Grid& grid, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(1, 5);
  std::uniform_real_distribution<double> center(-0.5 * grid.radius(), 0.5 * grid.radius());
  std::uniform_real_distribution<double> width(0.5, 2.0);
  std::normal_distribution<double> amplitude;
  const int bumps = count(rng);
  std::vector<std::array<double, 4>> params(bumps);
  for (auto& p : params) p = {center(rng), center(rng), width(rng), amplitude(rng)};
  Vector v = grid.sample([&](std::span<const double> y) {
    double total = 0.0;
    for (const auto& p : params) {
      double r2 = 0.0;
      for (int a = 0; a < grid.dim(); ++a) r2 += (y[a] - p[a]) * (y[a] - p[a]);
      total += p[3] * std::exp(-r2 / (p[2] * p[2]));
    }
    return total;
  });
  for (std::size_t j = 0; j < grid.size(); ++j)
    if (grid.on_boundary(j)) v[j] = 0.0;
  return v;
}

/// exp(-|y|²/4) with the boundary layer zeroed.
inline Vector ground_state(const Grid& grid) {
  Vector v = grid.sample([&](std::span<const double> y) {
    double r2 = 0.0;
    for (double c : y) r2 += c * c;
    return std::exp(-0.25 * r2);
  });
  for (std::size_t j = 0; j < grid.size(); ++j)
    if (grid.on_boundary(j)) v[j] = 0.0;
  return v;
}

struct InequalitySuiteReport {
  int fields = 0;
  int poincare_violations = 0;
  double poincare_worst_ratio = 0.0;      // max (N/2)‖u‖² / ‖∇u‖²
  double ground_state_ratio = 0.0;        // same ratio at exp(-|y|²/4)
  double moment_constant = 0.0;           // max ∫u²|y|²K / ∫|∇u|²K
  double l1_constant = 0.0;               // (∫K^{-1})^{1/2}
  double l1_worst_ratio = 0.0;            // max ∫|u| / (C ‖u‖_K)
  int l1_violations = 0;

  bool passed() const { return poincare_violations == 0 && l1_violations == 0 && std::isfinite(moment_constant); }
};

inline InequalitySuiteReport run_inequality_suite(const Grid& grid, int fields = 1000,
                                                  std::uint64_t seed = 2024,
                                                  double slack = 1e-12) {
  const WeightedSpace space(grid);
  InequalitySuiteReport rep;
  rep.fields = fields;
  rep.l1_constant = l1_embedding_constant(space);
  const Vector r2 = grid.sample([](std::span<const double> y) {
    double t = 0.0;
    for (double c : y) t += c * c;
    return t;
  });
  Vector plain(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) plain[j] = grid.trapezoid_factor(j) * grid.cell_volume();

  const PoincareCheck g = check_poincare(space, ground_state(grid));
  rep.ground_state_ratio = g.lhs / g.rhs;

  std::mt19937_64 rng(seed);
  for (int f = 0; f < fields; ++f) {
    const Vector u = random_smooth_field(grid, rng);
    const PoincareCheck p = check_poincare(space, u);
    if (p.rhs == 0.0 && p.lhs == 0.0) continue;
    const double ratio = p.lhs / p.rhs;
    rep.poincare_worst_ratio = std::max(rep.poincare_worst_ratio, ratio);
    if (p.lhs > p.rhs * (1.0 + slack)) ++rep.poincare_violations;
    const double moment = space.inner(u, u.cwiseProduct(r2));
    rep.moment_constant = std::max(rep.moment_constant, moment / p.rhs);
    const double l1 = (u.cwiseAbs().array() * plain.array()).sum();
    const double l1_ratio = l1 / (rep.l1_constant * space.norm(u));
    rep.l1_worst_ratio = std::max(rep.l1_worst_ratio, l1_ratio);
    if (l1_ratio > 1.0 + slack) ++rep.l1_violations;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// convergence studies

struct ConvergenceRow {
  double parameter = 0.0;  // Δy, Δs or R
  double value = 0.0;      // quantity of interest (norm, eigenvalue, ...)
  double difference = 0.0; // distance to the next refinement (or reference)
};

struct ConvergenceTable {
  std::string kind;
  std::vector<ConvergenceRow> rows;
  double rate = 0.0;       // log-log slope of difference vs parameter
  double r_squared = 0.0;
  double floor = 0.0;      // radius study: tolerance for "flat"
  bool flat_beyond = false;
};

/// Least-squares slope of log y against log x, with R².
inline std::pair<double, double> loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx, dy = std::log(y[i]) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  const double slope = sxy / sxx;
  const double r2 = syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return {slope, r2};
}

/// Smooth, control-free problem for the studies: constant potentials and a
/// Gaussian initial state.
inline PhysicalScenario convergence_scenario(int dim = 1) {
  PhysicalScenario p;
  p.dim = dim;
  p.horizon = 1.0;
  p.potential_a = ScalarField::constant(0.2);
  p.potential_b = VectorField::constant(std::vector<double>(dim, 0.3));
  p.leader_region = Box{std::vector<double>(dim, -1.0), std::vector<double>(dim, 1.0)};
  p.target = ScalarField::constant(0.0);
  return p;
}

inline Vector convergence_initial_state(const Grid& grid) {
  Vector v = grid.sample([](std::span<const double> y) {
    double r2 = 0.0;
    for (double c : y) r2 += (c - 0.5) * (c - 0.5);
    return std::exp(-0.5 * r2);
  });
  for (std::size_t j = 0; j < grid.size(); ++j)
    if (grid.on_boundary(j)) v[j] = 0.0;
  return v;
}

/// Final-state self-convergence under halving Δy (nested grids, fixed Δs).
inline ConvergenceTable space_convergence(const PhysicalScenario& p,
                                          std::vector<int> points = {33, 65, 129, 257},
                                          double radius = 8.0, int steps = 64) {
  ConvergenceTable table;
  table.kind = "space";
  std::vector<Vector> finals;
  std::vector<Grid> grids;
  for (int n : points) {
    grids.emplace_back(p.dim, n, radius);
    const auto sys = make_control_system(p, grids.back(), steps, 0.5);
    const Vector v0 = convergence_initial_state(grids.back());
    finals.push_back(sys->forward({}, &v0).final_state());
  }
  std::vector<double> hs, diffs;
  for (std::size_t l = 0; l + 1 < points.size(); ++l) {
    const Grid& coarse = grids[l];
    const Grid& fine = grids[l + 1];
    const int ratio = (fine.points() - 1) / (coarse.points() - 1);
    Vector restricted(coarse.size());
    for (std::size_t j = 0; j < coarse.size(); ++j) {
      const auto ij = coarse.unravel(j);
      restricted[j] = finals[l + 1][fine.ravel(ij[0] * ratio, coarse.dim() == 2 ? ij[1] * ratio : 0)];
    }
    const WeightedSpace space(coarse);
    const double diff = space.norm(finals[l] - restricted);
    table.rows.push_back({coarse.spacing(), space.norm(finals[l]), diff});
    hs.push_back(coarse.spacing());
    diffs.push_back(diff);
  }
  std::tie(table.rate, table.r_squared) = loglog_fit(hs, diffs);
  return table;
}

/// Final-state self-convergence under halving Δs.
inline ConvergenceTable time_convergence(const PhysicalScenario& p, double theta,
                                         std::vector<int> steps = {16, 32, 64, 128, 256},
                                         int points = 129, double radius = 8.0) {
  ConvergenceTable table;
  table.kind = theta == 1.0 ? "time_implicit_euler" : "time";
  const Grid grid(p.dim, points, radius);
  const Vector v0 = convergence_initial_state(grid);
  std::vector<Vector> finals;
  for (int m : steps) {
    const auto sys = make_control_system(p, grid, m, theta);
    finals.push_back(sys->forward({}, &v0).final_state());
  }
  const WeightedSpace space(grid);
  const double S = similarity_time(p.horizon);
  std::vector<double> dss, diffs;
  for (std::size_t l = 0; l + 1 < steps.size(); ++l) {
    const double diff = space.norm(finals[l] - finals[l + 1]);
    table.rows.push_back({S / steps[l], space.norm(finals[l]), diff});
    dss.push_back(S / steps[l]);
    diffs.push_back(diff);
  }
  std::tie(table.rate, table.r_squared) = loglog_fit(dss, diffs);
  return table;
}

/// λ_1 against the truncation radius at fixed Δy; differences are taken
/// against the largest radius.
inline ConvergenceTable radius_convergence(std::vector<double> radii = {4, 6, 8, 10},
                                           double spacing = 0.0625, double floor = 1e-6,
                                           double flat_from = 8.0) {
  ConvergenceTable table;
  table.kind = "radius";
  table.floor = floor;
  std::vector<double> lambdas;
  for (double R : radii) {
    const int n = static_cast<int>(std::lround(2 * R / spacing)) + 1;
    lambdas.push_back(spectral_probe(Grid(1, n, R), 1).front());
  }
  table.flat_beyond = true;
  for (std::size_t l = 0; l < radii.size(); ++l) {
    const double diff = std::abs(lambdas[l] - lambdas.back());
    table.rows.push_back({radii[l], lambdas[l], diff});
    if (radii[l] >= flat_from && diff > floor) table.flat_beyond = false;
  }
  return table;
}

}  // namespace stackheat
