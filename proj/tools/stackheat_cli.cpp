// stackheat: command-line driver.
//
//   stackheat <command> [--scenario PATH | --preset NAME] [--out DIR] ...
//
// Exit codes: 0 ok, 1 solver failure, 2 configuration error, 3 failed check.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stackheat/stackheat.hpp"

namespace fs = std::filesystem;
using namespace stackheat;

namespace {

struct Common {
  std::string scenario;
  std::string preset;
  std::string out = "out";
  int jobs = 1;
  std::uint64_t seed = 1;
  std::string eps_sweep = "1e-1,1e-2,1e-3,1e-4";
  double theta = -1.0;
  std::string grid;
  int steps = 0;
  bool deterministic = false;
  double eps = 1e-3;
  int k = 10;
  std::string kind = "all";
  int fields = 200;
  int checkpoint_every = 0;
  double leader_amplitude = 0.0;
};

struct VerificationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_list(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(key, "cannot parse '" + item + "' as a number");
    }
  }
  if (out.empty()) throw ConfigError(key, "empty list");
  return out;
}

struct Loaded {
  ScenarioConfig config;
  std::string raw;
};

Loaded load(const Common& c, const std::string& default_preset) {
  Loaded l;
  if (!c.scenario.empty() && !c.preset.empty())
    throw ConfigError("scenario", "give either --scenario or --preset");
  if (c.scenario == "-") {
    l.raw.assign(std::istreambuf_iterator<char>(std::cin), {});
  } else if (!c.scenario.empty()) {
    std::ifstream in(c.scenario);
    if (!in) throw ConfigError("scenario", "cannot open " + c.scenario);
    l.raw.assign(std::istreambuf_iterator<char>(in), {});
  } else {
    l.raw = preset_text(c.preset.empty() ? default_preset : c.preset);
  }
  l.config = scenario_from_text(l.raw);
  if (!c.grid.empty()) {
    const auto v = parse_list(c.grid, "grid");
    if (v.size() != 2) throw ConfigError("grid", "expected n,R");
    l.config.points = static_cast<int>(v[0]);
    l.config.radius = v[1];
    if (l.config.points < 3 || !(l.config.radius > 0)) throw ConfigError("grid", "need n >= 3 and R > 0");
  }
  if (c.steps != 0) {
    if (c.steps < 2) throw ConfigError("steps", "need at least 2 steps");
    l.config.steps = c.steps;
  }
  if (c.theta >= 0) {
    if (c.theta != 0.5 && c.theta != 1.0) throw ConfigError("theta", "must be 0.5 or 1.0");
    l.config.theta = c.theta;
  }
  return l;
}

std::shared_ptr<ControlSystem> build(const Loaded& l) {
  SimilarityScenario sim(l.config.scenario);
  TimeGrid tg{sim.horizon(), l.config.steps, l.config.theta};
  auto sys = std::make_shared<ControlSystem>(std::move(sim), l.config.grid(), tg);
  sys->set_scenario_hash(scenario_hash(l.config));
  return sys;
}

void write_manifest(const Common& c, const std::string& command, const Loaded& l, json tolerances,
                    double seconds) {
  RunManifest m;
  m.command = command;
  m.config = l.config;
  m.scenario_hash = scenario_hash(l.config);
  m.input_hash = git_blob_hash(l.raw);
  m.seed = c.seed;
  m.tolerances = std::move(tolerances);
  m.seconds = seconds;
  m.deterministic = c.deterministic;
  write_text(fs::path(c.out) / "manifest.json", dump_json(m.to_json()));
  write_text(fs::path(c.out) / "scenario.json", dump_json(scenario_to_json(l.config)));
}

json coercivity_json(const CoercivityDiagnostic& d) {
  return {{"margin", d.margin}, {"C_S", d.C_S}, {"C_S_is_estimate", true},
          {"k1", d.bounds.k1}, {"k2", d.bounds.k2}, {"k3", d.bounds.k3}, {"k4", d.bounds.k4},
          {"alpha_max", d.alpha_max}, {"rho_max", d.rho_max}};
}

ControlField leader_probe(const ControlSystem& sys, double amplitude) {
  ControlField g = sys.zero_control();
  for (int k = 0; k < sys.steps(); ++k) g[k] = amplitude * sys.leader_mask(k);
  return g;
}

// --- commands ----------------------------------------------------------------

int cmd_solve_state(const Common& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const Loaded l = load(c, "desk");
  const auto sys = build(l);
  const double amplitude = c.leader_amplitude != 0.0 ? c.leader_amplitude : 1.0;
  ControlBundle controls{leader_probe(*sys, amplitude), sys->zero_followers()};
  const auto sources = bundle_sources(*sys, controls);
  const Trajectory traj = sys->forward(sources);
  const EnergyCheck energy = energy_bound(*sys, traj, sources);
  const fs::path out(c.out);
  write_field(out / "final_state", {sys->grid(), traj.final_state()});
  if (c.checkpoint_every > 0) write_trajectory(out / "trajectory", sys->grid(), traj.states, c.checkpoint_every);
  CsvTable norms({"step", "s", "norm_K", "h1_norm"});
  for (std::size_t k = 0; k < traj.states.size(); ++k)
    norms.add({static_cast<double>(k), sys->time().time(static_cast<int>(k)),
               sys->space().norm(traj.states[k]), std::sqrt(sys->space().h1_norm_squared(traj.states[k]))});
  norms.write(out / "state_norms.csv");
  field_slice_csv({sys->grid(), traj.final_state()}).write(out / "final_state.csv");
  const json report = {{"leader_amplitude", amplitude},
                       {"final_norm_K", sys->space().norm(traj.final_state())},
                       {"energy_bound", {{"lhs", energy.lhs}, {"rhs", energy.rhs}, {"holds", energy.lhs <= energy.rhs}}},
                       {"scenario_hash", traj.scenario_hash}};
  write_text(out / "state_report.json", dump_json(report));
  write_manifest(c, "solve-state", l, {{"implicit_step", "sparse LU"}},
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << dump_json(report);
  return 0;
}

int cmd_solve_nash(const Common& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const Loaded l = load(c, "tiny");
  const auto sys = build(l);
  const NashGame game(sys);
  const ControlField g = leader_probe(*sys, c.leader_amplitude);
  NashOptions options;
  auto [h, report] = game.solve(g, options);
  const NashVerification check = game.verify(g, h, NashVerifyOptions{.seed = c.seed});
  report.verified = check.passed;
  json j = {{"residuals", report.residuals},
            {"iterations", report.iterations},
            {"method", report.method},
            {"converged", report.converged},
            {"alpha", sys->scenario().alphas()},
            {"verified", report.verified},
            {"euler_lagrange", check.euler_lagrange},
            {"worst_deviation", check.worst_deviation},
            {"derivative_error", check.derivative_error},
            {"violations", check.violations}};
  if (report.coercivity) {
    const json d = coercivity_json(*report.coercivity);
    for (auto it = d.begin(); it != d.end(); ++it) j[it.key()] = it.value();
  }
  j["warning"] = report.warning.empty() ? json(nullptr) : json(report.warning);
  const fs::path out(c.out);
  write_text(out / "nash_report.json", dump_json(j));
  ControlBundle bundle{g, h};
  write_field(out / "final_state", {sys->grid(), solve_state(*sys, bundle).final_state()});
  for (int i = 0; i < sys->followers(); ++i)
    write_field(out / ("follower_" + std::to_string(i) + "_last_step"), {sys->grid(), h[i][sys->steps() - 1]});
  write_manifest(c, "solve-nash", l, {{"nash", options.tolerance}},
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << dump_json(j);
  return 0;
}

json sweep_row_json(const SweepEntry& e) {
  return {{"epsilon", e.epsilon},
          {"weighted_residual", e.weighted_residual},
          {"physical_residual", e.physical_residual},
          {"physical_bound", e.physical_bound},
          {"inequality_holds", e.inequality_holds},
          {"leader_norm", e.leader_norm},
          {"nash_iters", e.nash_iterations},
          {"outer_iters", e.outer_iterations},
          {"converged", e.converged},
          {"optimality", {{"state_equation", e.optimality.state_equation},
                          {"adjoint_equation", e.optimality.adjoint_equation},
                          {"adjoint_terminal", e.optimality.adjoint_terminal},
                          {"feedback", e.optimality.feedback},
                          {"feedback_state", e.optimality.feedback_state}}}};
}

int run_sweep(const Common& c, const std::string& command, const std::vector<double>& epsilons) {
  const auto t0 = std::chrono::steady_clock::now();
  const Loaded l = load(c, "desk");
  const auto sys = build(l);
  LeaderOptions options;
  const ControllabilityReport rep = controllability_experiment(sys, epsilons, options, c.jobs);
  const fs::path out(c.out);
  CsvTable table({"epsilon", "weighted_residual", "physical_residual", "leader_norm", "nash_iters", "outer_iters"});
  json rows = json::array();
  bool inequality = true;
  for (std::size_t e = 0; e < rep.sweep.size(); ++e) {
    const SweepEntry& row = rep.sweep[e];
    table.add({row.epsilon, row.weighted_residual, row.physical_residual, row.leader_norm,
               static_cast<double>(row.nash_iterations), static_cast<double>(row.outer_iterations)});
    rows.push_back(sweep_row_json(row));
    inequality = inequality && row.inequality_holds;
    std::ostringstream tag;
    tag << "eps_" << e;
    write_field(out / tag.str() / "final_state", {sys->grid(), rep.solutions[e].final_state});
    write_field(out / tag.str() / "leader_first_step", {sys->grid(), rep.solutions[e].leader[0]});
  }
  table.write(out / "sweep.csv");
  json j = {{"sweep", rows},
            {"target_norm", rep.target_norm},
            {"strictly_decreasing", rep.strictly_decreasing()},
            {"physical_inequality_holds", inequality}};
  if (rep.coercivity) j["coercivity"] = coercivity_json(*rep.coercivity);
  write_text(out / (command == "solve-leader" ? "leader_report.json" : "controllability_report.json"),
             dump_json(j));
  write_manifest(c, command, l,
                 {{"outer_gradient", options.tolerance}, {"inner", options.inner_tolerance}},
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << table.str();
  if (!inequality) throw VerificationFailure("physical-space residual bound violated");
  return 0;
}

// Verification suite on the scenario's own discretization.
int cmd_verify(const Common& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const Loaded l = load(c, "tiny");
  const auto sys = build(l);
  std::vector<TestCaseResult> cases;
  auto run = [&](const std::string& name, auto&& body) {
    const auto start = std::chrono::steady_clock::now();
    TestCaseResult r{name, "stackheat.verify"};
    try {
      const std::string failure = body();
      r.passed = failure.empty();
      r.message = failure;
    } catch (const std::exception& e) {
      r.passed = false;
      r.message = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (r.passed ? "PASS " : "FAIL ") << name << (r.passed ? "" : ": " + r.message) << "\n";
    cases.push_back(std::move(r));
  };
  std::mt19937_64 rng(c.seed);
  const WeightedSpace& space = sys->space();

  run("self_adjoint_L", [&]() -> std::string {
    for (int t = 0; t < 20; ++t) {
      const Vector u = random_smooth_field(sys->grid(), rng), v = random_smooth_field(sys->grid(), rng);
      const double d = std::abs(space.inner(space.apply_L(u), v) - space.inner(u, space.apply_L(v)));
      if (d > 1e-12 * space.norm(u) * space.norm(v) * (1 + space.norm(space.apply_L(u)) / space.norm(u)))
        return "asymmetry " + std::to_string(d);
    }
    return {};
  });
  run("follower_duality", [&]() -> std::string {
    for (int t = 0; t < 20; ++t)
      for (int i = 0; i < sys->followers(); ++i) {
        const ControlField h = random_control(*sys, i, rng);
        const Vector xi = random_smooth_field(sys->grid(), rng);
        const double lhs = space.inner(resolvent_Li(*sys, i, h), xi);
        const double rhs = sys->control_inner(h, adjoint_of_Li(*sys, i, xi));
        if (std::abs(lhs - rhs) > 1e-10 * sys->control_norm(h) * space.norm(xi))
          return "pairing mismatch " + std::to_string(std::abs(lhs - rhs));
      }
    return {};
  });
  run("nash_equilibrium", [&]() -> std::string {
    const NashGame game(sys);
    const ControlField g = random_control(*sys, -1, rng);
    auto [h, report] = game.solve(g);
    const NashVerification v = game.verify(g, h, NashVerifyOptions{.seed = c.seed});
    if (!v.passed) return "violations: " + std::to_string(v.violations.size());
    if (sys->grid().size() <= 64 && sys->steps() <= 8 && sys->followers() <= 3) {
      const DenseInstance d = assemble_dense(sys);
      const BruteForceNash bf = brute_force_nash(d, g);
      const double diff = sys->bundle_norm(h - bf.followers) / std::max(sys->bundle_norm(bf.followers), 1e-300);
      if (diff > 1e-8) return "dense mismatch " + std::to_string(diff);
    }
    return {};
  });
  run("coercivity", [&]() -> std::string {
    const NashGame game(sys);
    const auto& diag = game.coercivity();
    if (diag.margin <= 0) return {};  // nothing is claimed
    for (int t = 0; t < 20; ++t) {
      const FollowerBundle h = random_followers(*sys, rng);
      if (game.inner(game.apply(h), h) < 0.5 * diag.bounds.k1 * game.inner(h, h))
        return "coercivity bound violated";
    }
    return {};
  });
  run("leader_gradient", [&]() -> std::string {
    LeaderOptions lo;
    lo.epsilon = 1e-2;
    const LeaderProblem problem(sys, lo);
    const ControlField g = random_control(*sys, -1, rng);
    const ControlField dir = random_control(*sys, -1, rng);
    const double analytic = sys->control_inner(problem.gradient(g), dir);
    const double t = 1e-3;
    const double fd = (problem.objective(g + t * dir) - problem.objective(g - t * dir)) / (2 * t);
    const double err = std::abs(analytic - fd) / std::max(std::abs(fd), 1e-300);
    return err <= 1e-6 ? std::string() : "relative error " + std::to_string(err);
  });
  run("weighted_inequalities", [&]() -> std::string {
    const InequalitySuiteReport r = run_inequality_suite(sys->grid(), c.fields, c.seed);
    if (r.passed()) return {};
    return std::to_string(r.poincare_violations) + " Poincare and " + std::to_string(r.l1_violations) +
           " L1 violations";
  });

  const fs::path out(c.out);
  write_text(out / "suite.xml", junit_xml("stackheat.verify", cases));
  CsvTable table({"check", "passed", "seconds"});
  for (const auto& r : cases) table.add_text({r.name, r.passed ? "1" : "0", format_number(r.seconds)});
  table.write(out / "suite.csv");
  write_manifest(c, "verify", l, {{"duality", 1e-10}, {"nash", 1e-8}, {"gradient", 1e-6}},
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  for (const auto& r : cases)
    if (!r.passed) throw VerificationFailure("verification suite failed");
  return 0;
}

void write_convergence(const fs::path& path, const ConvergenceTable& t) {
  CsvTable table({"parameter", "value", "difference"});
  for (const auto& r : t.rows) table.add({r.parameter, r.value, r.difference});
  table.write(path);
}

int cmd_convergence(const Common& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const Loaded l = load(c, "desk");
  PhysicalScenario p = convergence_scenario(l.config.scenario.dim);
  p.horizon = l.config.scenario.horizon;
  p.potential_a = l.config.scenario.potential_a;
  p.potential_b = l.config.scenario.potential_b;
  const fs::path out(c.out);
  json summary = json::object();
  const bool all = c.kind == "all";
  if (all || c.kind == "space") {
    const auto t = space_convergence(p);
    write_convergence(out / "convergence_space.csv", t);
    summary["space"] = {{"rate", t.rate}, {"r_squared", t.r_squared}};
  }
  if (all || c.kind == "time") {
    const auto t = time_convergence(p, 0.5);
    write_convergence(out / "convergence_time.csv", t);
    summary["time"] = {{"rate", t.rate}, {"r_squared", t.r_squared}};
    const auto e = time_convergence(p, 1.0);
    write_convergence(out / "convergence_time_implicit_euler.csv", e);
    summary["time_implicit_euler"] = {{"rate", e.rate}, {"r_squared", e.r_squared}};
  }
  if (all || c.kind == "radius") {
    const auto t = radius_convergence();
    write_convergence(out / "convergence_radius.csv", t);
    summary["radius"] = {{"floor", t.floor}, {"flat_for_R_ge_8", t.flat_beyond}};
  }
  if (summary.empty()) throw ConfigError("kind", "expected space, time, radius or all");
  write_text(out / "convergence_report.json", dump_json(summary));
  write_manifest(c, "convergence", l, json::object(),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << dump_json(summary);
  return 0;
}

int cmd_spectrum(const Common& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const Loaded l = load(c, "desk");
  const auto values = spectral_probe(l.config.grid(), c.k);
  CsvTable table({"index", "eigenvalue"});
  for (std::size_t i = 0; i < values.size(); ++i) table.add({static_cast<double>(i + 1), values[i]});
  table.write(fs::path(c.out) / "spectrum.csv");
  write_manifest(c, "spectrum", l, json::object(),
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  std::cout << table.str();
  return 0;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--scenario", c.scenario, "scenario JSON file, or - for stdin");
  app->add_option("--preset", c.preset, "built-in scenario: tiny, desk, desk2d");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--jobs", c.jobs, "worker threads for independent runs")->check(CLI::PositiveNumber);
  app->add_option("--seed", c.seed, "random seed");
  app->add_option("--theta", c.theta, "0.5 (Crank-Nicolson) or 1.0 (implicit Euler)");
  app->add_option("--grid", c.grid, "n,R");
  app->add_option("--steps", c.steps, "time steps");
  app->add_flag("--deterministic", c.deterministic, "omit timings from the manifest");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stackelberg-Nash control of the heat equation in similarity variables"};
  app.require_subcommand(1);
  Common c;
  int code = 0;
  std::function<int()> action;

  auto* state = app.add_subcommand("solve-state", "forward solve with a constant leader control");
  add_common(state, c);
  state->add_option("--leader-amplitude", c.leader_amplitude, "leader control value on its region");
  state->add_option("--checkpoint-every", c.checkpoint_every, "write every k-th state");
  state->callback([&] { action = [&] { return cmd_solve_state(c); }; });

  auto* nash = app.add_subcommand("solve-nash", "followers' equilibrium for a fixed leader control");
  add_common(nash, c);
  nash->add_option("--leader-amplitude", c.leader_amplitude, "leader control value on its region");
  nash->callback([&] { action = [&] { return cmd_solve_nash(c); }; });

  auto* leader = app.add_subcommand("solve-leader", "penalized leader problem for one epsilon");
  add_common(leader, c);
  leader->add_option("--eps", c.eps, "penalty");
  leader->callback([&] { action = [&] { return run_sweep(c, "solve-leader", {c.eps}); }; });

  auto* ctrl = app.add_subcommand("controllability", "epsilon sweep with the physical-space check");
  add_common(ctrl, c);
  ctrl->add_option("--eps-sweep", c.eps_sweep, "comma-separated penalties");
  ctrl->callback([&] {
    action = [&] { return run_sweep(c, "controllability", parse_list(c.eps_sweep, "eps-sweep")); };
  });

  auto* verify = app.add_subcommand("verify", "oracle and property suite");
  add_common(verify, c);
  verify->add_option("--fields", c.fields, "random fields for the inequality checks");
  verify->callback([&] { action = [&] { return cmd_verify(c); }; });

  auto* conv = app.add_subcommand("convergence", "self-convergence studies");
  add_common(conv, c);
  conv->add_option("--kind", c.kind, "space, time, radius or all");
  conv->callback([&] { action = [&] { return cmd_convergence(c); }; });

  auto* spec = app.add_subcommand("spectrum", "smallest eigenvalues of the discrete operator");
  add_common(spec, c);
  spec->add_option("--k", c.k, "number of eigenvalues (1..20)");
  spec->callback([&] { action = [&] { return cmd_spectrum(c); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int r = app.exit(e);
    return r == 0 ? 0 : 2;
  }
  try {
    code = action();
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    std::cout << "configuration error in '" << e.key() << "'\n";
    return 2;
  } catch (const InstanceTooLarge& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const VerificationFailure& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 1;
  }
  return code;
}
