#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace stackheat {

/// Axis-aligned box [lo, hi] in R^N.
struct Box {
  std::vector<double> lo;
  std::vector<double> hi;

  int dim() const { return static_cast<int>(lo.size()); }

  bool well_formed() const {
    if (lo.empty() || lo.size() != hi.size()) return false;
    for (std::size_t a = 0; a < lo.size(); ++a)
      if (!(lo[a] < hi[a])) return false;
    return true;
  }

  bool contains(std::span<const double> y) const {
    for (std::size_t a = 0; a < lo.size(); ++a)
      if (y[a] < lo[a] || y[a] > hi[a]) return false;
    return true;
  }

  bool contains(const Box& other) const {
    for (std::size_t a = 0; a < lo.size(); ++a)
      if (other.lo[a] < lo[a] || other.hi[a] > hi[a]) return false;
    return true;
  }

  /// Image under y -> factor * y, factor > 0.
  Box scaled(double factor) const {
    Box out = *this;
    for (std::size_t a = 0; a < lo.size(); ++a) {
      out.lo[a] *= factor;
      out.hi[a] *= factor;
    }
    return out;
  }

  /// Open boxes intersect.
  bool overlaps(const Box& other) const {
    for (std::size_t a = 0; a < lo.size(); ++a)
      if (!(lo[a] < other.hi[a] && other.lo[a] < hi[a])) return false;
    return true;
  }

  /// Per-axis distance from y to the box (zero inside).
  double axis_distance(std::span<const double> y, std::size_t a) const {
    if (y[a] < lo[a]) return lo[a] - y[a];
    if (y[a] > hi[a]) return y[a] - hi[a];
    return 0.0;
  }

  bool operator==(const Box&) const = default;
};

}  // namespace stackheat
