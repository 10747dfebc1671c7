#pragma once

// Gaussian-weighted space L²(K), K(y) = exp(|y|²/4), on a truncated grid,
// and the divergence-form operator L v = -K^{-1} div(K ∇v).
//
// K is sampled at nodes and at half nodes (cell faces), so that with the
// trapezoidal mass W_j = w_j K_j Δy^N the stencil satisfies
//   (Lu, v)_K = (u, Lv)_K = Σ_faces K_f (Δu)(Δv) / Δy² · Δy^N
// exactly for fields vanishing on the boundary layer.

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>
#include <lapacke.h>

#include "stackheat/grid.hpp"

namespace stackheat {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// K at nodes and at the "+½ Δy e_a" face of every node.
struct WeightK {
  Vector node;
  std::array<Vector, 2> face;

  explicit WeightK(const Grid& grid) {
    const double h = grid.spacing();
    node.resize(grid.size());
    for (int a = 0; a < grid.dim(); ++a) face[a].resize(grid.size());
    for (std::size_t j = 0; j < grid.size(); ++j) {
      const auto y = grid.point(j);
      double r2 = 0.0;
      for (int a = 0; a < grid.dim(); ++a) r2 += y[a] * y[a];
      node[j] = std::exp(0.25 * r2);
      for (int a = 0; a < grid.dim(); ++a) {
        const double shifted = y[a] + 0.5 * h;
        face[a][j] = std::exp(0.25 * (r2 - y[a] * y[a] + shifted * shifted));
      }
    }
  }
};

class WeightedSpace {
 public:
  explicit WeightedSpace(Grid grid) : grid_(std::move(grid)), weight_(grid_) {
    const double volume = grid_.cell_volume();
    mass_.resize(grid_.size());
    for (std::size_t j = 0; j < grid_.size(); ++j)
      mass_[j] = grid_.trapezoid_factor(j) * weight_.node[j] * volume;
  }

  const Grid& grid() const { return grid_; }
  const WeightK& weight() const { return weight_; }
  /// Trapezoidal quadrature weights of ∫ · K dy.
  const Vector& mass() const { return mass_; }

  double inner(const Vector& u, const Vector& v) const {
    return (u.array() * v.array() * mass_.array()).sum();
  }

  double norm(const Vector& u) const { return std::sqrt(inner(u, u)); }

  /// (Lv)_j on interior nodes; boundary values of v act as Dirichlet data,
  /// the output vanishes on the boundary layer.
  Vector apply_L(const Vector& v) const {
    Vector out = Vector::Zero(grid_.size());
    const double inv_h2 = 1.0 / (grid_.spacing() * grid_.spacing());
    for (std::size_t k = 0; k < grid_.interior_size(); ++k) {
      const std::size_t j = grid_.interior_to_full(k);
      double flux = 0.0;
      for (int a = 0; a < grid_.dim(); ++a) {
        const std::size_t st = grid_.stride(a);
        flux += weight_.face[a][j] * (v[j + st] - v[j]) -
                weight_.face[a][j - st] * (v[j] - v[j - st]);
      }
      out[j] = -flux * inv_h2 / weight_.node[j];
    }
    return out;
  }

  /// Discrete ∫ |∇u|² K dy: face differences weighted by K at the face.
  double gradient_energy(const Vector& u) const {
    const double h = grid_.spacing();
    const double scale = grid_.cell_volume() / (h * h);
    double total = 0.0;
    const int n = grid_.points();
    for (int a = 0; a < grid_.dim(); ++a) {
      const std::size_t st = grid_.stride(a);
      for (std::size_t j = 0; j < grid_.size(); ++j) {
        const auto ij = grid_.unravel(j);
        if (ij[a] == n - 1) continue;
        double transverse = 1.0;
        if (grid_.dim() == 2) {
          const int t = ij[1 - a];
          if (t == 0 || t == n - 1) transverse = 0.5;
        }
        const double d = u[j + st] - u[j];
        total += transverse * weight_.face[a][j] * d * d;
      }
    }
    return total * scale;
  }

  /// ‖u‖²_{H¹(K)} = ‖u‖² + ‖∇u‖² (weighted).
  double h1_norm_squared(const Vector& u) const {
    return inner(u, u) + gradient_energy(u);
  }

  /// Interior matrix of L (not symmetric; W L is).
  SparseMatrix interior_L() const {
    const std::size_t m = grid_.interior_size();
    const double inv_h2 = 1.0 / (grid_.spacing() * grid_.spacing());
    const int n = grid_.points();
    std::vector<Eigen::Triplet<double>> entries;
    entries.reserve(m * (1 + 2 * grid_.dim()));
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t j = grid_.interior_to_full(k);
      const auto ij = grid_.unravel(j);
      const double scale = inv_h2 / weight_.node[j];
      double diag = 0.0;
      for (int a = 0; a < grid_.dim(); ++a) {
        const std::size_t st = grid_.stride(a);
        const std::size_t interior_stride = (grid_.dim() == 2 && a == 0) ? n - 2 : 1;
        const double kp = weight_.face[a][j];
        const double km = weight_.face[a][j - st];
        diag += kp + km;
        if (ij[a] + 1 < n - 1) entries.emplace_back(k, k + interior_stride, -kp * scale);
        if (ij[a] - 1 > 0) entries.emplace_back(k, k - interior_stride, -km * scale);
      }
      entries.emplace_back(k, k, diag * scale);
    }
    SparseMatrix out(m, m);
    out.setFromTriplets(entries.begin(), entries.end());
    return out;
  }

  /// Mass weights restricted to interior nodes.
  Vector interior_mass() const { return grid_.restrict_interior(mass_); }

 private:
  Grid grid_;
  WeightK weight_;
  Vector mass_;
};

/// (u, v)_{L²(K)} by trapezoidal quadrature.
inline double inner_K(const Field& u, const Field& v) {
  require_same_grid(u.grid, v.grid);
  return WeightedSpace(u.grid).inner(u.values, v.values);
}

inline Field apply_L(const Field& v) {
  return {v.grid, WeightedSpace(v.grid).apply_L(v.values)};
}

struct PoincareCheck {
  double lhs;  // (N/2) ‖u‖²_{L²(K)}
  double rhs;  // ‖∇u‖²_{L²(K)}
};

/// Both sides of the weighted Poincaré inequality (N/2)‖u‖² ≤ ‖∇u‖².
/// u must vanish on the boundary layer.
inline PoincareCheck check_poincare(const WeightedSpace& space, const Vector& u) {
  const Grid& g = space.grid();
  for (std::size_t j = 0; j < g.size(); ++j)
    if (g.on_boundary(j) && u[j] != 0.0)
      throw std::invalid_argument("check_poincare: field must vanish on the boundary");
  return {0.5 * g.dim() * space.inner(u, u), space.gradient_energy(u)};
}

inline PoincareCheck check_poincare(const Field& u) {
  return check_poincare(WeightedSpace(u.grid), u.values);
}

/// Default cap on interior unknowns for the dense spectral probe.
inline constexpr std::size_t kDenseThreshold = 4096;

/// The k smallest eigenvalues of the discrete L (Dirichlet on the boundary
/// layer), from a direct symmetric eigensolve of W^{1/2} L W^{-1/2} in
/// LAPACK band storage.
inline std::vector<double> spectral_probe(const Grid& grid, int k,
                                          std::size_t dense_threshold = kDenseThreshold) {
  const std::size_t m = grid.interior_size();
  if (m > dense_threshold)
    throw InstanceTooLarge("spectral_probe: " + std::to_string(m) +
                           " unknowns exceed the dense threshold");
  if (k < 1 || k > 20 || static_cast<std::size_t>(k) > m)
    throw std::invalid_argument("spectral_probe: need 1 <= k <= min(20, unknowns)");

  const WeightedSpace space(grid);
  const SparseMatrix L = space.interior_L();
  const Vector w = space.interior_mass();
  const lapack_int bandwidth = grid.dim() == 1 ? 1 : grid.points() - 2;
  const lapack_int ldab = bandwidth + 1;
  const auto nn = static_cast<lapack_int>(m);
  std::vector<double> band(static_cast<std::size_t>(ldab) * m, 0.0);
  // upper band, column major: ab[bandwidth + r - c + c * ldab] = A(r, c), r <= c
  for (int r = 0; r < L.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(L, r); it; ++it) {
      const auto c = static_cast<lapack_int>(it.col());
      if (c < r) continue;
      const double sym = it.value() * std::sqrt(w[r] / w[c]);
      band[static_cast<std::size_t>(bandwidth + r - c + c * ldab)] = sym;
    }
  }
  std::vector<double> values(m), unused(1);
  std::vector<lapack_int> fail(m);
  lapack_int found = 0;
  const lapack_int info = LAPACKE_dsbevx(
      LAPACK_COL_MAJOR, 'N', 'I', 'U', nn, bandwidth, band.data(), ldab,
      unused.data(), nn, 0.0, 0.0, 1, k, 0.0, &found, values.data(),
      unused.data(), 1, fail.data());
  if (info != 0) throw std::runtime_error("spectral_probe: LAPACK dsbevx failed");
  values.resize(static_cast<std::size_t>(found));
  return values;
}

/// (∫ K^{-1} dy)^{1/2}: constant of the embedding ∫|v| ≤ C ‖v‖_{L²(K)}.
inline double l1_embedding_constant(const WeightedSpace& space) {
  const Grid& g = space.grid();
  double total = 0.0;
  for (std::size_t j = 0; j < g.size(); ++j)
    total += g.trapezoid_factor(j) / space.weight().node[j];
  return std::sqrt(total * g.cell_volume());
}

}  // namespace stackheat
