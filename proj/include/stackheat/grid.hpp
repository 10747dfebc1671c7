#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "stackheat/errors.hpp"

namespace stackheat {

using Vector = Eigen::VectorXd;

/// Tensor grid on [-R, R]^N with n nodes per axis, N in {1, 2}.
/// Nodes on the outer layer carry homogeneous Dirichlet data for the solvers.
class Grid {
 public:
  Grid() = default;

  Grid(int dim, int points, double radius)
      : dim_(dim), points_(points), radius_(radius) {
    if (dim != 1 && dim != 2) throw std::invalid_argument("Grid: dim must be 1 or 2");
    if (points < 3) throw std::invalid_argument("Grid: need at least 3 points per axis");
    if (!(radius > 0.0)) throw std::invalid_argument("Grid: radius must be positive");
    spacing_ = 2.0 * radius / (points - 1);
    nodes_.resize(points);
    for (int i = 0; i < points; ++i) nodes_[i] = -radius + i * spacing_;
    // exact symmetry about the origin
    for (int i = 0; i < points / 2; ++i) nodes_[points - 1 - i] = -nodes_[i];
    if (points % 2 == 1) nodes_[points / 2] = 0.0;
  }

  int dim() const { return dim_; }
  int points() const { return points_; }
  double radius() const { return radius_; }
  double spacing() const { return spacing_; }
  const std::vector<double>& axis() const { return nodes_; }

  /// Total node count n^N.
  std::size_t size() const {
    return dim_ == 1 ? static_cast<std::size_t>(points_)
                     : static_cast<std::size_t>(points_) * points_;
  }

  /// Interior node count (n-2)^N.
  std::size_t interior_size() const {
    const auto m = static_cast<std::size_t>(points_ - 2);
    return dim_ == 1 ? m : m * m;
  }

  /// Offset between neighbours along an axis; axis 0 is the slow index.
  std::size_t stride(int axis) const {
    return (dim_ == 2 && axis == 0) ? static_cast<std::size_t>(points_) : 1;
  }

  std::array<int, 2> unravel(std::size_t index) const {
    if (dim_ == 1) return {static_cast<int>(index), 0};
    return {static_cast<int>(index / points_), static_cast<int>(index % points_)};
  }

  std::size_t ravel(int i0, int i1 = 0) const {
    return dim_ == 1 ? static_cast<std::size_t>(i0)
                     : static_cast<std::size_t>(i0) * points_ + i1;
  }

  std::array<double, 2> point(std::size_t index) const {
    const auto ij = unravel(index);
    return {nodes_[ij[0]], dim_ == 2 ? nodes_[ij[1]] : 0.0};
  }

  bool on_boundary(std::size_t index) const {
    const auto ij = unravel(index);
    for (int a = 0; a < dim_; ++a)
      if (ij[a] == 0 || ij[a] == points_ - 1) return true;
    return false;
  }

  /// Trapezoid weight factor (1/2 per boundary axis), without Δy^N.
  double trapezoid_factor(std::size_t index) const {
    const auto ij = unravel(index);
    double w = 1.0;
    for (int a = 0; a < dim_; ++a)
      if (ij[a] == 0 || ij[a] == points_ - 1) w *= 0.5;
    return w;
  }

  double cell_volume() const { return std::pow(spacing_, dim_); }

  /// Full index of the k-th interior node.
  std::size_t interior_to_full(std::size_t k) const {
    const auto m = static_cast<std::size_t>(points_ - 2);
    if (dim_ == 1) return k + 1;
    return ravel(static_cast<int>(k / m) + 1, static_cast<int>(k % m) + 1);
  }

  Vector restrict_interior(const Vector& full) const {
    Vector out(interior_size());
    for (std::size_t k = 0; k < interior_size(); ++k) out[k] = full[interior_to_full(k)];
    return out;
  }

  Vector extend_interior(const Vector& interior) const {
    Vector out = Vector::Zero(size());
    for (std::size_t k = 0; k < interior_size(); ++k) out[interior_to_full(k)] = interior[k];
    return out;
  }

  /// Sample fn(y) at every node.
  Vector sample(const std::function<double(std::span<const double>)>& fn) const {
    Vector out(size());
    for (std::size_t j = 0; j < size(); ++j) {
      const auto y = point(j);
      out[j] = fn(std::span<const double>(y.data(), dim_));
    }
    return out;
  }

  bool operator==(const Grid& other) const {
    return dim_ == other.dim_ && points_ == other.points_ && radius_ == other.radius_;
  }

 private:
  int dim_ = 1;
  int points_ = 3;
  double radius_ = 1.0;
  double spacing_ = 1.0;
  std::vector<double> nodes_;
};

/// Grid function in L²(K).
struct Field {
  Grid grid;
  Vector values;

  static Field zeros(const Grid& g) { return {g, Vector::Zero(g.size())}; }

  static Field sample(const Grid& g,
                      const std::function<double(std::span<const double>)>& fn) {
    return {g, g.sample(fn)};
  }
};

inline void require_same_grid(const Grid& a, const Grid& b) {
  if (!(a == b)) throw GridMismatch("fields live on different grids");
}

}  // namespace stackheat
