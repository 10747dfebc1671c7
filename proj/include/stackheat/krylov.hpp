#pragma once

// Matrix-free Krylov methods over any Hilbert space. A vector type V needs
// copy construction, `v += w`, `v -= w`, `v *= c` and `c * v`; the inner
// product is passed as a callable `double(const V&, const V&)`.

#include <cmath>
#include <concepts>
#include <utility>
#include <vector>

namespace stackheat {

template <class V>
concept HilbertVector = std::copy_constructible<V> && requires(V a, const V b, double c) {
  { a += b };
  { a -= b };
  { a *= c };
  { c * b } -> std::convertible_to<V>;
};

struct KrylovOptions {
  double tolerance = 1e-10;  // on ‖Ax - b‖ / ‖b‖
  int max_iterations = 500;
  int restart = 40;  // GMRES only
};

struct KrylovResult {
  bool converged = false;
  int iterations = 0;
  std::vector<double> residuals;  // relative, one per iteration (plus initial)

  double final_residual() const { return residuals.empty() ? 0.0 : residuals.back(); }
};

/// Conjugate gradients for an operator self-adjoint and positive definite in `dot`.
template <HilbertVector V, class Apply, class Dot>
KrylovResult conjugate_gradient(const Apply& apply, const V& rhs, V& x, const Dot& dot,
                                const KrylovOptions& options) {
  KrylovResult result;
  const double rhs_norm = std::sqrt(dot(rhs, rhs));
  if (rhs_norm == 0.0) {
    x *= 0.0;
    result.converged = true;
    result.residuals.push_back(0.0);
    return result;
  }
  V r = rhs;
  r -= apply(x);
  V p = r;
  double rr = dot(r, r);
  result.residuals.push_back(std::sqrt(rr) / rhs_norm);
  if (result.residuals.back() <= options.tolerance) {
    result.converged = true;
    return result;
  }
  for (int it = 0; it < options.max_iterations; ++it) {
    const V ap = apply(p);
    const double curvature = dot(p, ap);
    if (!(curvature > 0.0)) break;  // lost definiteness
    const double step = rr / curvature;
    x += step * p;
    r -= step * ap;
    const double rr_next = dot(r, r);
    result.iterations = it + 1;
    result.residuals.push_back(std::sqrt(rr_next) / rhs_norm);
    if (result.residuals.back() <= options.tolerance) {
      result.converged = true;
      return result;
    }
    p *= rr_next / rr;
    p += r;
    rr = rr_next;
  }
  return result;
}

/// Restarted GMRES with modified Gram-Schmidt (one reorthogonalization pass).
template <HilbertVector V, class Apply, class Dot>
KrylovResult gmres(const Apply& apply, const V& rhs, V& x, const Dot& dot,
                   const KrylovOptions& options) {
  KrylovResult result;
  const double rhs_norm = std::sqrt(dot(rhs, rhs));
  if (rhs_norm == 0.0) {
    x *= 0.0;
    result.converged = true;
    result.residuals.push_back(0.0);
    return result;
  }
  const int restart = std::max(1, options.restart);
  int total = 0;
  while (true) {
    V r = rhs;
    r -= apply(x);
    double beta = std::sqrt(dot(r, r));
    result.residuals.push_back(beta / rhs_norm);
    if (beta / rhs_norm <= options.tolerance) {
      result.converged = true;
      result.iterations = total;
      return result;
    }
    if (total >= options.max_iterations) break;

    std::vector<V> basis;
    basis.reserve(restart + 1);
    r *= 1.0 / beta;
    basis.push_back(std::move(r));
    std::vector<std::vector<double>> h(restart + 1, std::vector<double>(restart, 0.0));
    std::vector<double> cs(restart, 0.0), sn(restart, 0.0), g(restart + 1, 0.0);
    g[0] = beta;
    int k = 0;
    for (; k < restart && total < options.max_iterations; ++k, ++total) {
      V w = apply(basis[k]);
      for (int pass = 0; pass < 2; ++pass) {
        for (int i = 0; i <= k; ++i) {
          const double c = dot(basis[i], w);
          h[i][k] += c;
          w -= c * basis[i];
        }
      }
      h[k + 1][k] = std::sqrt(dot(w, w));
      for (int i = 0; i < k; ++i) {
        const double t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
        h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
        h[i][k] = t;
      }
      const double denom = std::hypot(h[k][k], h[k + 1][k]);
      cs[k] = h[k][k] / denom;
      sn[k] = h[k + 1][k] / denom;
      const double next_norm = h[k + 1][k];
      h[k][k] = denom;
      h[k + 1][k] = 0.0;
      g[k + 1] = -sn[k] * g[k];
      g[k] = cs[k] * g[k];
      const double estimate = std::abs(g[k + 1]) / rhs_norm;
      if (estimate <= options.tolerance || next_norm == 0.0) {
        ++k;
        ++total;
        break;
      }
      w *= 1.0 / next_norm;
      basis.push_back(std::move(w));
    }
    // back substitution on the k×k triangle
    std::vector<double> y(k, 0.0);
    for (int i = k - 1; i >= 0; --i) {
      double acc = g[i];
      for (int j = i + 1; j < k; ++j) acc -= h[i][j] * y[j];
      y[i] = acc / h[i][i];
    }
    for (int i = 0; i < k; ++i) x += y[i] * basis[i];
  }
  result.iterations = total;
  return result;
}

/// Richardson iteration x <- x - step (Ax - b); converges for coercive A when
/// step <= coercivity / ‖A‖².
template <HilbertVector V, class Apply, class Dot>
KrylovResult richardson(const Apply& apply, const V& rhs, V& x, const Dot& dot,
                        double step, const KrylovOptions& options) {
  KrylovResult result;
  const double rhs_norm = std::sqrt(dot(rhs, rhs));
  if (rhs_norm == 0.0) {
    x *= 0.0;
    result.converged = true;
    result.residuals.push_back(0.0);
    return result;
  }
  for (int it = 0; it <= options.max_iterations; ++it) {
    V r = apply(x);
    r -= rhs;
    result.residuals.push_back(std::sqrt(dot(r, r)) / rhs_norm);
    result.iterations = it;
    if (result.residuals.back() <= options.tolerance) {
      result.converged = true;
      return result;
    }
    x -= step * r;
  }
  return result;
}

struct PowerResult {
  double eigenvalue = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Largest eigenvalue of a self-adjoint positive semidefinite operator.
/// `start` is overwritten with the dominant direction (unit norm).
template <HilbertVector V, class Apply, class Dot>
PowerResult power_iteration(const Apply& apply, V& start, const Dot& dot,
                            double tolerance = 1e-10, int max_iterations = 500) {
  PowerResult result;
  double norm = std::sqrt(dot(start, start));
  if (norm == 0.0) return result;
  start *= 1.0 / norm;
  double previous = 0.0;
  for (int it = 1; it <= max_iterations; ++it) {
    V next = apply(start);
    const double rayleigh = dot(start, next);
    norm = std::sqrt(dot(next, next));
    result.iterations = it;
    result.eigenvalue = rayleigh;
    if (norm == 0.0) {
      result.converged = true;
      return result;
    }
    next *= 1.0 / norm;
    start = std::move(next);
    if (it > 1 && std::abs(rayleigh - previous) <= tolerance * std::abs(rayleigh)) {
      result.converged = true;
      return result;
    }
    previous = rayleigh;
  }
  return result;
}

}  // namespace stackheat
