// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "stackheat/stackheat.hpp"

using namespace stackheat;

namespace {

struct Outcome {
  bool passed = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void criterion(int number, double budget_seconds, const std::function<void(Outcome&)>& body) {
  Outcome out;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(out);
  } catch (const std::exception& e) {
    out.passed = false;
    out.detail << " [exception: " << e.what() << "]";
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.require(seconds <= budget_seconds, "runtime over " + std::to_string(budget_seconds) + " s");
  std::printf("%s criterion %d:%s (%.2f s)\n", out.passed ? "PASS" : "FAIL", number,
              out.detail.str().c_str(), seconds);
  std::fflush(stdout);
  if (!out.passed) ++failures;
}

std::shared_ptr<const ControlSystem> build(const ScenarioConfig& cfg) {
  return make_control_system(cfg.scenario, cfg.grid(), cfg.steps, cfg.theta);
}

Vector random_state(const Grid& g, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Vector v(g.size());
  for (std::size_t j = 0; j < g.size(); ++j) v[j] = g.on_boundary(j) ? 0.0 : normal(rng);
  return v;
}

// exp(-|y|²/4) at every node, boundary layer included (it is Dirichlet data
// for apply_L); the residual is taken on interior rows.
double relative_residual_L(const Grid& g) {
  const WeightedSpace space(g);
  const Vector phi = g.sample([](std::span<const double> y) {
    double r2 = 0.0;
    for (double c : y) r2 += c * c;
    return std::exp(-0.25 * r2);
  });
  const Vector r = space.apply_L(phi) - 0.5 * g.dim() * g.extend_interior(g.restrict_interior(phi));
  return space.norm(r) / space.norm(phi);
}

// 1: ground state of L
void eigenpair(Outcome& o) {
  const double l1 = spectral_probe(Grid(1, 257, 8.0), 1).front();
  const double l2 = spectral_probe(Grid(2, 65, 8.0), 1).front();
  const double r1 = relative_residual_L(Grid(1, 257, 8.0));
  const double r2 = relative_residual_L(Grid(2, 257, 8.0));
  o.detail << " lambda1(N=1,n=257)=" << l1 << " lambda1(N=2,n=65)=" << l2
           << " residual(N=1,n=257)=" << r1 << " residual(N=2,n=257)=" << r2
           << " residual(N=2,n=65)=" << relative_residual_L(Grid(2, 65, 8.0));
  o.require(std::abs(l1 - 0.5) <= 1e-3, "lambda1 N=1");
  o.require(std::abs(l2 - 1.0) <= 5e-3, "lambda1 N=2");
  o.require(r1 <= 1e-3, "apply_L residual N=1");
  o.require(r2 <= 1e-3, "apply_L residual N=2");
}

// 2: weighted Poincaré
void poincare(Outcome& o) {
  const Grid g(1, 257, 8.0);
  const InequalitySuiteReport rep = run_inequality_suite(g, 1000, 2024, 1e-12);
  const double h2 = g.spacing() * g.spacing();
  o.detail << " fields=" << rep.fields << " violations=" << rep.poincare_violations
           << " worst_ratio=" << rep.poincare_worst_ratio
           << " ground_state_gap=" << std::abs(1.0 - rep.ground_state_ratio) << " dy^2=" << h2;
  o.require(rep.poincare_violations == 0, "violations");
  o.require(std::abs(1.0 - rep.ground_state_ratio) <= 4.0 * h2, "ground state saturation");
}

// 3: discrete duality of L_i
void duality(Outcome& o) {
  const auto sys = build(preset("tiny"));
  std::mt19937_64 rng(3);
  double worst = 0.0;
  for (int pair = 0; pair < 100; ++pair) {
    const int i = pair % sys->followers();
    const ControlField h = random_control(*sys, i, rng);
    const Vector xi = random_state(sys->grid(), rng);
    const double lhs = sys->space().inner(resolvent_Li(*sys, i, h), xi);
    const double rhs = sys->control_inner(h, adjoint_of_Li(*sys, i, xi));
    worst = std::max(worst, std::abs(lhs - rhs) / (sys->control_norm(h) * sys->space().norm(xi)));
  }
  o.detail << " pairs=100 worst=" << worst;
  o.require(worst <= 1e-10, "duality defect");
}

// 4: iterative Nash vs dense brute force
void nash_oracle(Outcome& o) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  double worst = 0.0, worst_el = 0.0, worst_dev = 0.0;
  int verify_failures = 0;
  for (int trial = 0; trial < 20; ++trial) {
    ScenarioConfig cfg = preset("tiny");
    PhysicalScenario& p = cfg.scenario;
    const int n = 1 + trial % 3;
    p.follower_regions.resize(n);
    p.alpha.resize(n);
    for (double& a : p.alpha) a = 0.01 + 0.04 * unit(rng);
    p.potential_a = ScalarField::constant(0.3 * unit(rng));
    p.potential_b = VectorField::constant({0.4 * unit(rng) - 0.2, 0.4 * unit(rng) - 0.2});
    p.target = ScalarField::gaussian(0.5 + unit(rng), {unit(rng) - 0.5, unit(rng) - 0.5}, 0.7 + unit(rng));
    const auto sys = build(cfg);
    const ControlField g = random_control(*sys, -1, rng);
    const NashGame game(sys);
    NashOptions opt;
    opt.tolerance = 1e-12;
    opt.diagnostics = false;
    const FollowerBundle h = game.solve(g, opt).first;
    const BruteForceNash direct = brute_force_nash(assemble_dense(sys), g);
    worst = std::max(worst, sys->bundle_norm(h - direct.followers) / sys->bundle_norm(direct.followers));
    NashVerifyOptions vo;
    vo.seed = 100 + trial;
    const NashVerification v = game.verify(g, h, vo);
    if (!v.passed) ++verify_failures;
    for (double e : v.euler_lagrange) worst_el = std::max(worst_el, e);
    for (double d : v.worst_deviation) worst_dev = std::min(worst_dev, d);
  }
  o.detail << " scenarios=20 worst_relative=" << worst << " worst_euler_lagrange=" << worst_el
           << " most_negative_deviation=" << worst_dev << " verify_failures=" << verify_failures;
  o.require(worst <= 1e-8, "brute force agreement");
  o.require(verify_failures == 0, "verify_nash");
}

// 5: coercivity of the Nash operator
void coercivity(Outcome& o) {
  for (const std::string name : {"tiny", "desk"}) {
    const auto sys = build(preset(name));
    const NashGame game(sys);
    const CoercivityDiagnostic& c = game.coercivity();
    o.detail << " " << name << ":margin=" << c.margin;
    if (c.margin <= 0.0) continue;
    std::mt19937_64 rng(5);
    double worst = std::numeric_limits<double>::infinity();
    for (int t = 0; t < 100; ++t) {
      const FollowerBundle h = random_followers(*sys, rng);
      worst = std::min(worst, game.inner(game.apply(h), h) / game.inner(h, h));
    }
    o.detail << " min_quotient=" << worst << " k1/2=" << c.bounds.k1 / 2;
    o.require(worst >= c.bounds.k1 / 2, name + " random bundles");
    if (name == "tiny") {
      const double spectrum = nash_numerical_range_min(assemble_dense(sys));
      o.detail << " dense_min=" << spectrum;
      o.require(spectrum >= c.bounds.k1 / 2, "dense symmetrized spectrum");
    }
  }
}

// 6: leader gradient against central differences
void leader_gradient(Outcome& o) {
  const auto sys = build(preset("tiny"));
  const LeaderProblem problem(sys);
  std::mt19937_64 rng(6);
  double worst = 0.0;
  for (int t = 0; t < 10; ++t) {
    const ControlField g = random_control(*sys, -1, rng);
    ControlField delta = random_control(*sys, -1, rng);
    delta *= 1.0 / sys->control_norm(delta);
    const double analytic = sys->control_inner(problem.gradient(g), delta);
    const double step = 1e-3 * std::max(1.0, sys->control_norm(g));
    const double fd = (problem.objective(g + step * delta) - problem.objective(g - step * delta)) / (2 * step);
    worst = std::max(worst, std::abs(analytic - fd) / std::max(std::abs(analytic), std::abs(fd)));
  }
  o.detail << " probes=10 worst_relative=" << worst;
  o.require(worst <= 1e-6, "gradient");
}

ControllabilityReport desk_report;

// 7: ε-sweep on desk
void controllability(Outcome& o) {
  const auto sys = build(preset("desk"));
  const int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  desk_report = controllability_experiment(sys, {1e-1, 1e-2, 1e-3, 1e-4}, {}, jobs, true);
  const auto& s = desk_report.sweep;
  o.detail << " margin=" << desk_report.coercivity->margin;
  bool inequality = true;
  for (const auto& row : s) {
    o.detail << " eps=" << row.epsilon << ":" << row.weighted_residual << "/" << row.physical_residual
             << "<=" << row.physical_bound;
    inequality = inequality && row.inequality_holds;
  }
  const double decrease = s.front().weighted_residual / s.back().weighted_residual;
  o.detail << " decrease=" << decrease;
  o.require(desk_report.coercivity->margin > 0, "margin");
  o.require(desk_report.strictly_decreasing(), "strict decrease");
  o.require(decrease >= 10.0, "total decrease");
  o.require(inequality, "physical inequality");
  for (const auto& row : s) o.require(row.converged, "outer convergence");
}

// 8: optimality system at the runs of criterion 7
void optimality(Outcome& o) {
  o.require(!desk_report.sweep.empty(), "criterion 7 results");
  double worst_system = 0.0, worst_feedback = 0.0;
  for (const auto& row : desk_report.sweep) {
    const OptimalityResiduals& r = row.optimality;
    worst_system = std::max({worst_system, r.state_equation, r.adjoint_equation, r.adjoint_terminal});
    worst_feedback = std::max({worst_feedback, r.feedback, r.feedback_state});
  }
  o.detail << " system=" << worst_system << " feedback=" << worst_feedback;
  o.require(worst_system <= 1e-7, "optimality system");
  o.require(worst_feedback <= 1e-7, "follower feedback");
}

// 9: convergence rates
void rates(Outcome& o) {
  const ConvergenceTable space = space_convergence(convergence_scenario(1));
  const ConvergenceTable time = time_convergence(convergence_scenario(1), 0.5);
  const ConvergenceTable radius = radius_convergence();
  o.detail << " space=" << space.rate << " time=" << time.rate << " radius:";
  for (const auto& row : radius.rows) o.detail << " R" << row.parameter << "=" << row.difference;
  o.require(std::abs(space.rate - 2.0) <= 0.3, "space rate");
  o.require(std::abs(time.rate - 2.0) <= 0.3, "time rate");
  o.require(radius.flat_beyond, "radius flat");
}

// 10: change of variables round trip
void round_trip(Outcome& o) {
  double worst = 0.0;
  for (int dim : {1, 2}) {
    const Grid g(dim, dim == 1 ? 129 : 33, 8.0);
    for (double p : {scaling::state(dim), scaling::control(dim), scaling::zeroth_order_potential}) {
      const SpaceTimeFunction w = [](Point y, double s) {
        double r2 = 0.0;
        for (double c : y) r2 += c * c;
        return std::exp(-0.3 * r2) * (1.0 + std::sin(s + y[0]));
      };
      const SpaceTimeFunction back = to_similarity_function(to_physical_function(w, dim, p), dim, p);
      const SpaceTimeFunction u = to_physical_function(w, dim, p);
      const SpaceTimeFunction u_again = to_physical_function(to_similarity_function(u, dim, p), dim, p);
      for (double s : {0.0, 0.3, std::log(2.0)}) {
        const double t = std::expm1(s);
        for (std::size_t j = 0; j < g.size(); ++j) {
          const auto y = g.point(j);
          const Point yp(y.data(), dim);
          const double a = w(yp, s);
          worst = std::max(worst, std::abs(back(yp, s) - a) / std::max(1.0, std::abs(a)));
          std::array<double, 2> x{};
          for (int c = 0; c < dim; ++c) x[c] = std::exp(0.5 * s) * y[c];
          const Point xp(x.data(), dim);
          const double b = u(xp, t);
          worst = std::max(worst, std::abs(u_again(xp, t) - b) / std::max(1.0, std::abs(b)));
        }
      }
    }
  }
  const auto sys = build(preset("desk"));
  std::mt19937_64 rng(10);
  const ControlField g = random_control(*sys, -1, rng);
  const ControlField back = from_physical_controls(*sys, to_physical_controls(*sys, g));
  for (int k = 0; k < sys->steps(); ++k)
    worst = std::max(worst, (back[k] - g[k]).cwiseAbs().maxCoeff() / std::max(1.0, g[k].cwiseAbs().maxCoeff()));
  o.detail << " worst=" << worst;
  o.require(worst <= 1e-10, "round trip");
}

}  // namespace

int main() {
  criterion(1, 10, eigenpair);
  criterion(2, 30, poincare);
  criterion(3, 60, duality);
  criterion(4, 120, nash_oracle);
  criterion(5, 60, coercivity);
  criterion(6, 120, leader_gradient);
  criterion(7, 600, controllability);
  criterion(8, 600, optimality);
  criterion(9, 300, rates);
  criterion(10, 5, round_trip);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
