#pragma once

// Physical (x,t) and similarity-variable (y,s) descriptions of the
// hierarchically controlled heat equation
//
//   u_t - Δu + a u + b·∇u = f χ_O + Σ_i w_i χ_{O_i}   in R^N × (0,T),  u(0)=0,
//
// and the exact change of variables
//
//   y = x / sqrt(1+t),  s = log(1+t),  v(y,s) = e^{sN/2} u(e^{s/2} y, e^s - 1),
//
// which turns it into  v_s + Lv + A v + B·∇v - (N/2) v = g χ_O'(s) + Σ h_i χ_O_i'(s)
// with L = -K^{-1} div(K ∇·) and K(y) = exp(|y|²/4).

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stackheat/box.hpp"
#include "stackheat/errors.hpp"

namespace stackheat {

using Point = std::span<const double>;

/// Scalar field on R^N × [0,T]: a constant, an isotropic Gaussian
/// amplitude·exp(-|x-c|²/width²) (time independent), or an arbitrary closure.
class ScalarField {
 public:
  enum class Kind { constant, gaussian, function };

  ScalarField() = default;

  static ScalarField constant(double value) {
    ScalarField f;
    f.kind_ = Kind::constant;
    f.amplitude_ = value;
    return f;
  }

  static ScalarField gaussian(double amplitude, std::vector<double> center,
                              double width) {
    ScalarField f;
    f.kind_ = Kind::gaussian;
    f.amplitude_ = amplitude;
    f.center_ = std::move(center);
    f.width_ = width;
    return f;
  }

  static ScalarField function(std::function<double(Point, double)> fn) {
    ScalarField f;
    f.kind_ = Kind::function;
    f.fn_ = std::move(fn);
    return f;
  }

  double operator()(Point x, double t) const {
    switch (kind_) {
      case Kind::constant:
        return amplitude_;
      case Kind::gaussian: {
        double r2 = 0.0;
        for (std::size_t a = 0; a < x.size(); ++a) {
          const double d = x[a] - center_[a];
          r2 += d * d;
        }
        return amplitude_ * std::exp(-r2 / (width_ * width_));
      }
      case Kind::function:
        return fn_(x, t);
    }
    return 0.0;
  }

  Kind kind() const { return kind_; }
  double amplitude() const { return amplitude_; }
  const std::vector<double>& center() const { return center_; }
  double width() const { return width_; }
  bool is_zero() const { return kind_ != Kind::function && amplitude_ == 0.0; }

 private:
  Kind kind_ = Kind::constant;
  double amplitude_ = 0.0;
  std::vector<double> center_;
  double width_ = 1.0;
  std::function<double(Point, double)> fn_;
};

/// Vector field on R^N × [0,T]: a constant vector or a closure writing N
/// components.
class VectorField {
 public:
  using Fn = std::function<void(Point, double, std::span<double>)>;

  VectorField() = default;

  static VectorField constant(std::vector<double> value) {
    VectorField f;
    f.value_ = std::move(value);
    return f;
  }

  static VectorField function(int dim, Fn fn) {
    VectorField f;
    f.value_.assign(static_cast<std::size_t>(dim), 0.0);
    f.fn_ = std::move(fn);
    return f;
  }

  void operator()(Point x, double t, std::span<double> out) const {
    if (fn_) {
      fn_(x, t, out);
      return;
    }
    std::copy(value_.begin(), value_.end(), out.begin());
  }

  bool is_constant() const { return !fn_; }
  /// Constant value (or zeros for closures).
  const std::vector<double>& value() const { return value_; }
  int dim() const { return static_cast<int>(value_.size()); }
  bool is_zero() const {
    return !fn_ && std::all_of(value_.begin(), value_.end(),
                               [](double c) { return c == 0.0; });
  }

 private:
  std::vector<double> value_;
  Fn fn_;
};

/// The problem in physical variables. The initial datum is zero; a nonzero
/// datum is removed beforehand by linearity.
struct PhysicalScenario {
  int dim = 1;
  double horizon = 1.0;  // T
  ScalarField potential_a = ScalarField::constant(0.0);
  VectorField potential_b = VectorField::constant({0.0});
  Box leader_region;
  std::vector<Box> follower_regions;
  std::vector<double> alpha;
  /// Width of the localizer ramp outside O_i'(S), in grid cells; 0 = indicator.
  double rho_margin = 2.0;
  ScalarField target = ScalarField::constant(0.0);

  int followers() const { return static_cast<int>(follower_regions.size()); }

  /// Throws ConfigError naming the offending key.
  void validate() const {
    if (dim != 1 && dim != 2) throw ConfigError("dim", "must be 1 or 2");
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw ConfigError("T", "horizon must be positive");
    if (potential_b.dim() != dim)
      throw ConfigError("b", "needs " + std::to_string(dim) + " components");
    check_box(leader_region, "leader_box");
    for (int i = 0; i < followers(); ++i) {
      const std::string key = "follower_boxes[" + std::to_string(i) + "]";
      check_box(follower_regions[i], key);
      if (follower_regions[i].overlaps(leader_region))
        throw ConfigError(key, "overlaps the leader box");
      for (int j = 0; j < i; ++j)
        if (follower_regions[i].overlaps(follower_regions[j]))
          throw ConfigError(key, "overlaps follower_boxes[" +
                                     std::to_string(j) + "]");
    }
    if (static_cast<int>(alpha.size()) != followers())
      throw ConfigError("alpha", "needs one weight per follower box");
    for (std::size_t i = 0; i < alpha.size(); ++i)
      if (!(alpha[i] > 0.0) || !std::isfinite(alpha[i]))
        throw ConfigError("alpha[" + std::to_string(i) + "]",
                          "weights must be positive");
    if (!(rho_margin >= 0.0)) throw ConfigError("rho_margin", "must be >= 0");
    if (target.kind() == ScalarField::Kind::gaussian) {
      if (static_cast<int>(target.center().size()) != dim)
        throw ConfigError("target", "center has wrong dimension");
      if (!(target.width() > 0.0))
        throw ConfigError("target", "width must be positive");
    }
    if (potential_a.kind() == ScalarField::Kind::gaussian &&
        static_cast<int>(potential_a.center().size()) != dim)
      throw ConfigError("a", "center has wrong dimension");
  }

 private:
  void check_box(const Box& box, const std::string& key) const {
    if (box.dim() != dim || box.hi.size() != box.lo.size())
      throw ConfigError(key, "box must have " + std::to_string(dim) +
                                 " coordinates in lo and hi");
    if (!box.well_formed()) throw ConfigError(key, "box needs lo < hi");
  }
};

/// Exponents p of the scaling law  w(y,s) = e^{p s} u(e^{s/2} y, e^s - 1).
namespace scaling {
inline double state(int dim) { return 0.5 * dim; }
inline constexpr double zeroth_order_potential = 1.0;
inline constexpr double first_order_potential = 0.5;
inline double control(int dim) { return 0.5 * (dim + 2); }
}  // namespace scaling

/// Physical time for similarity time s.
inline double physical_time(double s) { return std::expm1(s); }
/// Similarity time for physical time t.
inline double similarity_time(double t) { return std::log1p(t); }

/// u(x,t) value from w(y,s) value, t = e^s - 1.
inline double to_physical_value(double similarity_value, double t,
                                double exponent) {
  return std::pow(1.0 + t, -exponent) * similarity_value;
}

/// w(y,s) value from u(x,t) value.
inline double to_similarity_value(double physical_value, double s,
                                  double exponent) {
  return std::exp(exponent * s) * physical_value;
}

using SpaceTimeFunction = std::function<double(Point, double)>;

/// u(x,t) = (1+t)^{-p} w(x/sqrt(1+t), log(1+t)) for a similarity-variable w.
inline SpaceTimeFunction to_physical_function(SpaceTimeFunction w, int dim,
                                             double exponent) {
  return [w = std::move(w), dim, exponent](Point x, double t) {
    std::array<double, 2> y{};
    const double shrink = 1.0 / std::sqrt(1.0 + t);
    for (int a = 0; a < dim; ++a) y[a] = shrink * x[a];
    return to_physical_value(
        w(std::span<const double>(y.data(), dim), similarity_time(t)), t,
        exponent);
  };
}

/// w(y,s) = e^{p s} u(e^{s/2} y, e^s - 1) for a physical u.
inline SpaceTimeFunction to_similarity_function(SpaceTimeFunction u, int dim,
                                               double exponent) {
  return [u = std::move(u), dim, exponent](Point y, double s) {
    std::array<double, 2> x{};
    const double stretch = std::exp(0.5 * s);
    for (int a = 0; a < dim; ++a) x[a] = stretch * y[a];
    return to_similarity_value(
        u(std::span<const double>(x.data(), dim), physical_time(s)), s,
        exponent);
  };
}

struct JacobianBounds {
  double k1, k2, k3, k4;
};

/// Smooth ramp 1 -> 0 over [0, 1]; 3t² - 2t³ reversed.
inline double smooth_cutoff(double t) {
  if (t <= 0.0) return 1.0;
  if (t >= 1.0) return 0.0;
  return 1.0 - t * t * (3.0 - 2.0 * t);
}

/// The problem in similarity variables. Immutable; cheap to copy.
class SimilarityScenario {
 public:
  explicit SimilarityScenario(PhysicalScenario physical)
      : physical_(std::move(physical)) {
    physical_.validate();
    horizon_ = similarity_time(physical_.horizon);
  }

  const PhysicalScenario& physical() const { return physical_; }
  int dim() const { return physical_.dim; }
  int followers() const { return physical_.followers(); }
  /// S = log(T+1).
  double horizon() const { return horizon_; }
  double physical_horizon() const { return physical_.horizon; }
  double alpha(int i) const { return physical_.alpha[i]; }
  const std::vector<double>& alphas() const { return physical_.alpha; }

  /// A(y,s) = e^s a(e^{s/2} y, e^s - 1).
  double potential_a(Point y, double s) const {
    if (physical_.potential_a.kind() == ScalarField::Kind::constant)
      return std::exp(s) * physical_.potential_a.amplitude();
    std::array<double, 2> x{};
    const double stretch = std::exp(0.5 * s);
    for (int a = 0; a < dim(); ++a) x[a] = stretch * y[a];
    return to_similarity_value(
        physical_.potential_a(std::span<const double>(x.data(), dim()),
                              physical_time(s)),
        s, scaling::zeroth_order_potential);
  }

  /// B(y,s) = e^{s/2} b(e^{s/2} y, e^s - 1).
  void potential_b(Point y, double s, std::span<double> out) const {
    std::array<double, 2> x{};
    const double stretch = std::exp(0.5 * s);
    for (int a = 0; a < dim(); ++a) x[a] = stretch * y[a];
    physical_.potential_b(std::span<const double>(x.data(), dim()),
                          physical_time(s), out);
    for (int a = 0; a < dim(); ++a)
      out[a] = to_similarity_value(out[a], s, scaling::first_order_potential);
  }

  bool potentials_vanish() const {
    return physical_.potential_a.is_zero() && physical_.potential_b.is_zero();
  }

  /// O'(s) = e^{-s/2} O.
  Box leader_region(double s) const {
    return physical_.leader_region.scaled(std::exp(-0.5 * s));
  }

  /// O_i'(s) = e^{-s/2} O_i.
  Box follower_region(int i, double s) const {
    return physical_.follower_regions[i].scaled(std::exp(-0.5 * s));
  }

  /// v^S(y) = (1+T)^{N/2} u^T(sqrt(1+T) y).
  double target(Point y) const {
    std::array<double, 2> x{};
    const double stretch = std::sqrt(1.0 + physical_horizon());
    for (int a = 0; a < dim(); ++a) x[a] = stretch * y[a];
    return jacobian_y() *
           physical_.target(std::span<const double>(x.data(), dim()),
                            physical_horizon());
  }

  /// |D_{y,s}| of (x,t) -> (y,s): e^{s(N+2)/2}.
  double jacobian_ys(double s) const {
    const double slack = 1e-12 * std::max(1.0, horizon_);
    if (s < -slack || s > horizon_ + slack)
      throw std::out_of_range("jacobian_ys: s outside [0, S]");
    return std::exp(0.5 * (dim() + 2) * s);
  }

  /// |D_y| of x -> y at t = T: (1+T)^{N/2}.
  double jacobian_y() const {
    return std::pow(1.0 + physical_horizon(), 0.5 * dim());
  }

  JacobianBounds jacobian_bounds() const {
    return {1.0, std::exp(0.5 * (dim() + 2) * horizon_), jacobian_y(),
            jacobian_y()};
  }

  /// rho_i(y): 1 on O_i'(S), smooth ramp to 0 over `margin` (a length);
  /// margin 0 gives the indicator of O_i'(S).
  double localizer(int i, Point y, double margin) const {
    const Box box = follower_region(i, horizon_);
    double value = 1.0;
    for (int a = 0; a < dim(); ++a) {
      const double d = box.axis_distance(y, a);
      if (margin <= 0.0) {
        if (d > 0.0) return 0.0;
        continue;
      }
      value *= smooth_cutoff(d / margin);
    }
    return value;
  }

 private:
  PhysicalScenario physical_;
  double horizon_ = 0.0;
};

inline SimilarityScenario to_similarity(const PhysicalScenario& p) {
  return SimilarityScenario(p);
}

}  // namespace stackheat
