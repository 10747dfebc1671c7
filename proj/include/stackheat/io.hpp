#pragma once

// Scenario JSON, field files (raw little-endian float64 + JSON sidecar),
// CSV tables, JUnit XML and run manifests.

#include <bit>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "stackheat/control_system.hpp"
#include "stackheat/errors.hpp"
#include "stackheat/scenario.hpp"

namespace stackheat {

using json = nlohmann::json;

inline constexpr const char* kVersion = "0.3.0";

/// A scenario plus its discretization parameters.
struct ScenarioConfig {
  PhysicalScenario scenario;
  int points = 129;
  double radius = 8.0;
  int steps = 128;
  double theta = 0.5;

  Grid grid() const { return Grid(scenario.dim, points, radius); }
};

namespace detail {

inline std::vector<double> number_list(const json& j, const std::string& key) {
  if (!j.is_array()) throw ConfigError(key, "expected an array of numbers");
  std::vector<double> out;
  for (const auto& x : j) {
    if (!x.is_number()) throw ConfigError(key, "expected an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

inline Box parse_box(const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(key, "expected [lo[], hi[]]");
  return Box{number_list(j[0], key), number_list(j[1], key)};
}

inline json emit_box(const Box& b) { return json::array({b.lo, b.hi}); }

inline ScalarField parse_scalar(const json& j, const std::string& key) {
  if (j.is_number()) return ScalarField::constant(j.get<double>());
  if (!j.is_object() || !j.contains("kind")) throw ConfigError(key, "expected a number or {\"kind\": ...}");
  const std::string kind = j["kind"].get<std::string>();
  if (kind == "zero") return ScalarField::constant(0.0);
  if (kind == "constant") return ScalarField::constant(j.value("value", 0.0));
  if (kind == "gaussian") {
    if (!j.contains("center")) throw ConfigError(key, "gaussian needs a center");
    return ScalarField::gaussian(j.value("amplitude", 1.0), number_list(j["center"], key),
                                 j.value("width", 1.0));
  }
  throw ConfigError(key, "unknown kind '" + kind + "'");
}

inline json emit_scalar(const ScalarField& f, bool as_object) {
  if (f.kind() == ScalarField::Kind::gaussian)
    return {{"kind", "gaussian"}, {"amplitude", f.amplitude()}, {"center", f.center()}, {"width", f.width()}};
  if (f.kind() == ScalarField::Kind::function)
    throw ConfigError("scenario", "closure-valued fields cannot be serialized");
  if (as_object) {
    if (f.amplitude() == 0.0) return {{"kind", "zero"}};
    return {{"kind", "constant"}, {"value", f.amplitude()}};
  }
  return f.amplitude();
}

template <class T>
T required(const json& j, const std::string& key) {
  if (!j.contains(key)) throw ConfigError(key, "missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(key, "has the wrong type");
  }
}

}  // namespace detail

/// Parse and validate a scenario document. Missing grid/time sections fall
/// back to defaults (n = 129 in 1D, 65 in 2D; R = 8; 128 steps; θ = 1/2).
inline ScenarioConfig scenario_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("scenario", "expected a JSON object");
  ScenarioConfig cfg;
  PhysicalScenario& p = cfg.scenario;
  p.dim = detail::required<int>(j, "dim");
  if (p.dim != 1 && p.dim != 2) throw ConfigError("dim", "must be 1 or 2");
  p.horizon = detail::required<double>(j, "T");
  p.potential_a = j.contains("a") ? detail::parse_scalar(j["a"], "a") : ScalarField::constant(0.0);
  if (j.contains("b")) {
    if (j["b"].is_number())
      p.potential_b = VectorField::constant(std::vector<double>(p.dim, j["b"].get<double>()));
    else
      p.potential_b = VectorField::constant(detail::number_list(j["b"], "b"));
  } else {
    p.potential_b = VectorField::constant(std::vector<double>(p.dim, 0.0));
  }
  if (!j.contains("leader_box")) throw ConfigError("leader_box", "missing");
  p.leader_region = detail::parse_box(j["leader_box"], "leader_box");
  if (j.contains("follower_boxes")) {
    if (!j["follower_boxes"].is_array()) throw ConfigError("follower_boxes", "expected an array");
    for (std::size_t i = 0; i < j["follower_boxes"].size(); ++i)
      p.follower_regions.push_back(
          detail::parse_box(j["follower_boxes"][i], "follower_boxes[" + std::to_string(i) + "]"));
  }
  if (j.contains("alpha")) {
    if (j["alpha"].is_number())
      p.alpha.assign(p.follower_regions.size(), j["alpha"].get<double>());
    else
      p.alpha = detail::number_list(j["alpha"], "alpha");
  }
  if (j.contains("rho_margin")) p.rho_margin = detail::required<double>(j, "rho_margin");
  p.target = j.contains("target") ? detail::parse_scalar(j["target"], "target") : ScalarField::constant(0.0);

  cfg.points = p.dim == 1 ? 129 : 65;
  if (j.contains("grid")) {
    const json& g = j["grid"];
    if (g.contains("n")) cfg.points = detail::required<int>(g, "n");
    if (g.contains("R")) cfg.radius = detail::required<double>(g, "R");
  }
  if (j.contains("time")) {
    const json& t = j["time"];
    if (t.contains("steps")) cfg.steps = detail::required<int>(t, "steps");
    if (t.contains("theta")) cfg.theta = detail::required<double>(t, "theta");
  }
  if (cfg.points < 3) throw ConfigError("grid.n", "need at least 3 points");
  if (!(cfg.radius > 0)) throw ConfigError("grid.R", "must be positive");
  if (cfg.steps < 2) throw ConfigError("time.steps", "need at least 2 steps");
  if (cfg.theta < 0.5 || cfg.theta > 1.0) throw ConfigError("time.theta", "must lie in [0.5, 1]");
  p.validate();
  return cfg;
}

inline ScenarioConfig scenario_from_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("scenario", std::string("invalid JSON: ") + e.what());
  }
  return scenario_from_json(j);
}

/// Normalized document: every key present, fixed key order (nlohmann sorts).
inline json scenario_to_json(const ScenarioConfig& cfg) {
  const PhysicalScenario& p = cfg.scenario;
  if (!p.potential_b.is_constant()) throw ConfigError("b", "closure-valued fields cannot be serialized");
  json boxes = json::array();
  for (const auto& b : p.follower_regions) boxes.push_back(detail::emit_box(b));
  return {
      {"dim", p.dim},
      {"T", p.horizon},
      {"a", detail::emit_scalar(p.potential_a, false)},
      {"b", p.potential_b.value()},
      {"leader_box", detail::emit_box(p.leader_region)},
      {"follower_boxes", boxes},
      {"alpha", p.alpha},
      {"rho_margin", p.rho_margin},
      {"target", detail::emit_scalar(p.target, true)},
      {"grid", {{"n", cfg.points}, {"R", cfg.radius}}},
      {"time", {{"steps", cfg.steps}, {"theta", cfg.theta}}},
  };
}

inline std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

// --- presets ---------------------------------------------------------------

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"tiny", "desk", "desk2d"};
  return names;
}

inline std::string preset_text(const std::string& name) {
  if (name == "tiny")
    return R"({
  "dim": 2, "T": 1.0, "a": 0.1, "b": [0.2, -0.1],
  "leader_box": [[-3.0, -3.0], [-0.3, -0.3]],
  "follower_boxes": [[[0.3, 0.3], [3.0, 3.0]], [[0.3, -3.0], [3.0, -0.3]], [[-3.0, 0.3], [-0.3, 3.0]]],
  "alpha": [0.04, 0.04, 0.04], "rho_margin": 1.0,
  "target": {"kind": "gaussian", "amplitude": 1.0, "center": [0.5, 0.5], "width": 1.0},
  "grid": {"n": 8, "R": 4.0}, "time": {"steps": 8, "theta": 0.5}
})";
  if (name == "desk")
    return R"({
  "dim": 1, "T": 1.0, "a": 0.1, "b": [0.1],
  "leader_box": [[-1.5], [1.5]],
  "follower_boxes": [[[-4.0], [-2.0]], [[2.0], [4.0]]],
  "alpha": [0.1, 0.1], "rho_margin": 2.0,
  "target": {"kind": "gaussian", "amplitude": 1.0, "center": [0.0], "width": 1.0},
  "grid": {"n": 129, "R": 8.0}, "time": {"steps": 128, "theta": 0.5}
})";
  if (name == "desk2d")
    return R"({
  "dim": 2, "T": 1.0, "a": 0.1, "b": [0.1, 0.0],
  "leader_box": [[-1.5, -1.5], [1.5, 1.5]],
  "follower_boxes": [[[2.0, -1.0], [4.0, 1.0]], [[-4.0, -1.0], [-2.0, 1.0]]],
  "alpha": [0.05, 0.05], "rho_margin": 2.0,
  "target": {"kind": "gaussian", "amplitude": 1.0, "center": [0.0, 0.0], "width": 1.0},
  "grid": {"n": 65, "R": 8.0}, "time": {"steps": 64, "theta": 0.5}
})";
  throw ConfigError("preset", "unknown preset '" + name + "'");
}

inline ScenarioConfig preset(const std::string& name) { return scenario_from_text(preset_text(name)); }

// --- hashing ---------------------------------------------------------------

inline std::string sha1_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha1(), nullptr);
  std::ostringstream out;
  for (unsigned int i = 0; i < length; ++i)
    out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return out.str();
}

/// Same digest as `git hash-object`.
inline std::string git_blob_hash(const std::string& content) {
  return sha1_hex("blob " + std::to_string(content.size()) + '\0' + content);
}

inline std::string scenario_hash(const ScenarioConfig& cfg) {
  return git_blob_hash(dump_json(scenario_to_json(cfg)));
}

// --- fields ----------------------------------------------------------------

/// Writes `<stem>.bin` (little-endian float64) and `<stem>.json` {dim, R, n}.
inline void write_field(const std::filesystem::path& stem, const Field& field) {
  std::filesystem::create_directories(stem.parent_path().empty() ? "." : stem.parent_path());
  std::ofstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + stem.string() + ".bin");
  for (Eigen::Index j = 0; j < field.values.size(); ++j) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(field.values[j]);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  std::ofstream side(stem.string() + ".json");
  side << dump_json({{"dim", field.grid.dim()}, {"R", field.grid.radius()}, {"n", field.grid.points()}});
}

inline Field read_field(const std::filesystem::path& stem) {
  std::ifstream side(stem.string() + ".json");
  if (!side) throw ConfigError("field", "missing sidecar " + stem.string() + ".json");
  json meta;
  try {
    side >> meta;
  } catch (const json::exception& e) {
    throw ConfigError("field", std::string("bad sidecar: ") + e.what());
  }
  const Grid grid(detail::required<int>(meta, "dim"), detail::required<int>(meta, "n"),
                  detail::required<double>(meta, "R"));
  std::ifstream bin(stem.string() + ".bin", std::ios::binary);
  if (!bin) throw ConfigError("field", "missing " + stem.string() + ".bin");
  Field f = Field::zeros(grid);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    std::uint64_t bits = 0;
    if (!bin.read(reinterpret_cast<char*>(&bits), sizeof bits))
      throw GridMismatch("field data shorter than its sidecar grid");
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    f.values[j] = std::bit_cast<double>(bits);
  }
  if (bin.peek() != std::char_traits<char>::eof())
    throw GridMismatch("field data longer than its sidecar grid");
  return f;
}

/// Writes v^k for k = 0, every, 2·every, ..., m as `<dir>/state_<k>`.
inline void write_trajectory(const std::filesystem::path& dir, const Grid& grid,
                             const std::vector<Vector>& states, int every = 1) {
  const int m = static_cast<int>(states.size()) - 1;
  for (int k = 0; k <= m; ++k)
    if (k % every == 0 || k == m) {
      std::ostringstream name;
      name << "state_" << std::setw(4) << std::setfill('0') << k;
      write_field(dir / name.str(), {grid, states[k]});
    }
}

// --- tables ----------------------------------------------------------------

inline std::string format_number(double x) {
  std::ostringstream out;
  out << std::setprecision(17) << x;
  return out.str();
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add(const std::vector<double>& row) {
    std::vector<std::string> cells;
    for (double x : row) cells.push_back(format_number(x));
    rows_.push_back(std::move(cells));
  }

  void add_text(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string str() const {
    std::ostringstream out;
    write_row(out, header_);
    for (const auto& r : rows_) write_row(out, r);
    return out.str();
  }

  void write(const std::filesystem::path& path) const {
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    std::ofstream(path) << str();
  }

 private:
  static void write_row(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) out << (c ? "," : "") << cells[c];
    out << '\n';
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

/// 1D field as y,value rows.
inline CsvTable field_slice_csv(const Field& f) {
  CsvTable t({"y", "value"});
  if (f.grid.dim() == 1) {
    for (std::size_t j = 0; j < f.grid.size(); ++j) t.add({f.grid.point(j)[0], f.values[j]});
  } else {
    const int mid = f.grid.points() / 2;
    for (int i = 0; i < f.grid.points(); ++i) t.add({f.grid.axis()[i], f.values[f.grid.ravel(i, mid)]});
  }
  return t;
}

// --- JUnit -----------------------------------------------------------------

struct TestCaseResult {
  std::string name;
  std::string classname;
  double seconds = 0.0;
  bool passed = true;
  std::string message;
};

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string junit_xml(const std::string& suite, const std::vector<TestCaseResult>& cases) {
  int failures = 0;
  double total = 0.0;
  for (const auto& c : cases) {
    failures += c.passed ? 0 : 1;
    total += c.seconds;
  }
  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<testsuite name=\"" << xml_escape(suite) << "\" tests=\"" << cases.size()
      << "\" failures=\"" << failures << "\" time=\"" << std::fixed << std::setprecision(3) << total
      << "\">\n";
  for (const auto& c : cases) {
    out << "  <testcase classname=\"" << xml_escape(c.classname) << "\" name=\"" << xml_escape(c.name)
        << "\" time=\"" << c.seconds << "\"";
    if (c.passed) {
      out << "/>\n";
    } else {
      out << ">\n    <failure message=\"" << xml_escape(c.message) << "\"/>\n  </testcase>\n";
    }
  }
  out << "</testsuite>\n";
  return out.str();
}

// --- manifest --------------------------------------------------------------

struct RunManifest {
  std::string command;
  std::string scenario_hash;
  std::string input_hash;  // git blob hash of the raw input document
  ScenarioConfig config;
  std::uint64_t seed = 0;
  json tolerances = json::object();
  double seconds = 0.0;
  bool deterministic = false;

  json to_json() const {
    return {
        {"command", command},
        {"scenario_hash", scenario_hash},
        {"input_hash", input_hash},
        {"grid", {{"dim", config.scenario.dim}, {"n", config.points}, {"R", config.radius}}},
        {"time", {{"steps", config.steps}, {"theta", config.theta},
                  {"S", similarity_time(config.scenario.horizon)}}},
        {"tolerances", tolerances},
        {"seed", seed},
        {"timing_seconds", deterministic ? 0.0 : seconds},
        {"deterministic", deterministic},
        {"versions", {{"stackheat", kVersion}, {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                                             std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                                             std::to_string(EIGEN_MINOR_VERSION)}}},
    };
  }
};

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace stackheat
