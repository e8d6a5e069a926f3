// Copyright 2026 The flowforge Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FLOWFORGE_TRANSPORT_HPP
#define FLOWFORGE_TRANSPORT_HPP

#include "flowforge/density.hpp"

#include <Eigen/Eigenvalues>

#include <complex>
#include <limits>

namespace flowforge {

/// Monotone triangular (Knothe-Rosenblatt) transport pushing `source` to
/// `target`. Component k is
///
///   T_k(x_1..x_k) = F_target,k(T_1..T_{k-1}, .)^{-1}( F_source,k(x_1..x_{k-1}, x_k) )
///
/// evaluated from the cached cumulative tables of both densities. Immutable.
class TriangularMap {
 public:
  TriangularMap(GridDensity source, GridDensity target)
      : source_(std::move(source)), target_(std::move(target)) {
    if (source_.dim() != target_.dim())
      throw ArgumentError("kr_construct: source dim " +
                          std::to_string(source_.dim()) + " != target dim " +
                          std::to_string(target_.dim()));
  }

  int dim() const { return source_.dim(); }
  const GridDensity& source() const { return source_; }
  const GridDensity& target() const { return target_; }

  /// Component k (1-based) given the already computed prefixes of x and T(x).
  double component(int k, const Vec& x, const Vec& tx_prefix) const {
    const double u = source_.conditional(k, x).cdf(x[k - 1]);
    return target_.conditional(k, tx_prefix).inverse(u);
  }

  Vec operator()(const Vec& x) const { return evaluate(x); }

  Vec evaluate(const Vec& x) const {
    check_point(x, "tmap_eval");
    Vec tx = Vec::Zero(dim());
    for (int k = 1; k <= dim(); ++k) tx[k - 1] = component(k, x, tx);
    return tx;
  }

  /// T_t(x) = (1-t) x + t T(x).
  Vec displacement(const Vec& x, double t) const {
    if (!(t >= 0.0 && t <= 1.0))
      throw DomainError("displacement_interpolation: t outside [0,1]");
    return (1.0 - t) * x + t * evaluate(x);
  }

  /// Diagonal of the Jacobian from the density-ratio formula
  /// dT_k/dx_k = source_k(x_<k, x_k) / target_k(T_<k, T_k).
  Vec diagonal_density_ratio(const Vec& x) const {
    const Vec tx = evaluate(x);
    Vec diag(dim());
    for (int k = 1; k <= dim(); ++k) {
      const double num = source_.conditional(k, x).density(x[k - 1]);
      const double den = target_.conditional(k, tx).density(tx[k - 1]);
      diag[k - 1] = num / den;
    }
    return diag;
  }

  /// Central finite-difference Jacobian (lower triangular; entries above the
  /// diagonal are structurally zero and never evaluated). The point must lie
  /// at least 2*step from the boundary.
  Mat jacobian(const Vec& x, double step = 1e-5) const {
    check_point(x, "jacobian");
    for (int k = 0; k < dim(); ++k)
      if (x[k] < 2.0 * step || x[k] > 1.0 - 2.0 * step)
        throw DomainError("jacobian: point too close to the boundary: " +
                          detail::format_point(x));
    Mat jac = Mat::Zero(dim(), dim());
    for (int j = 0; j < dim(); ++j) {
      Vec xp = x, xm = x;
      xp[j] += step;
      xm[j] -= step;
      const Vec tp = evaluate(xp), tm = evaluate(xm);
      for (int i = j; i < dim(); ++i) jac(i, j) = (tp[i] - tm[i]) / (2.0 * step);
    }
    return jac;
  }

  /// Solves T_t(x) = y coordinate by coordinate. Each scalar equation
  /// (1-t) x_k + t T_k(x_<k, x_k) = y_k is increasing in x_k and fixes 0 and
  /// 1, so bisection on [0,1] always brackets the root. The returned value is
  /// the secant point of the final bracket.
  Vec inverse_displacement(const Vec& y, double t, double tol = 1e-10) const {
    detail::require(y.size() == dim(), "inverse_displacement: bad dim");
    Vec x = Vec::Zero(dim());
    Vec tx = Vec::Zero(dim());
    for (int k = 1; k <= dim(); ++k) {
      const auto src = source_.conditional(k, x);
      const auto tgt = target_.conditional(k, tx);
      const double yk = y[k - 1];
      auto g = [&](double xk) {
        return (1.0 - t) * xk + t * tgt.inverse(src.cdf(xk)) - yk;
      };
      double lo = 0.0, hi = 1.0;
      double glo = g(lo), ghi = g(hi);
      if (glo > 0.0 || ghi < 0.0) {
        // Only reachable through rounding at the faces of the cube.
        if (std::abs(glo) < 1e-12) hi = lo;
        else if (std::abs(ghi) < 1e-12) lo = hi;
        else
          throw NumericError("inverse_displacement: root not bracketed at " +
                             detail::format_point(y));
      }
      int iter = 0;
      while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        const double gm = g(mid);
        if (gm <= 0.0) {
          lo = mid;
          glo = gm;
        } else {
          hi = mid;
          ghi = gm;
        }
        if (++iter > 200)
          throw NumericError("inverse_displacement: bisection did not converge");
      }
      double xk = lo;
      if (hi > lo && ghi > glo) xk = lo - glo * (hi - lo) / (ghi - glo);
      x[k - 1] = std::clamp(xk, lo, hi);
      tx[k - 1] = tgt.inverse(src.cdf(x[k - 1]));
    }
    return x;
  }

 private:
  void check_point(const Vec& x, const char* what) const {
    detail::require(x.size() == dim(), std::string(what) + ": expected dim " +
                                           std::to_string(dim()));
    if (!source_.contains(x))
      throw DomainError(std::string(what) + ": point outside [0,1]^d: " +
                        detail::format_point(x));
  }

  GridDensity source_;
  GridDensity target_;
};

inline TriangularMap kr_construct(const GridDensity& source,
                                  const GridDensity& target) {
  return TriangularMap(source, target);
}

/// Result of checking that no Jacobian has a real eigenvalue in (-inf, 0].
struct SpectrumReport {
  std::vector<Vec> sample_points;
  /// Smallest distance of any eigenvalue to the ray (-inf, 0], minus the
  /// tolerance. Positive iff no point violates the condition.
  double min_real_eigenvalue_margin = std::numeric_limits<double>::infinity();
  std::vector<Vec> violating_points;
  bool ok() const { return violating_points.empty(); }
};

namespace detail {

// Distance in the complex plane from lambda to the ray (-inf, 0].
inline double distance_to_negative_axis(std::complex<double> lambda) {
  if (lambda.real() >= 0.0) return std::abs(lambda);
  return std::abs(lambda.imag());
}

inline std::vector<std::complex<double>> eigenvalues(const Mat& a,
                                                     const Vec& where) {
  if (a.rows() != a.cols())
    throw ArgumentError("spectrum_check: Jacobian must be square");
  if (!a.allFinite())
    throw NumericError("spectrum_check: non-finite Jacobian at " +
                       format_point(where));
  const auto n = a.rows();
  if (n == 1) return {std::complex<double>(a(0, 0), 0.0)};
  if (n == 2) {
    // Characteristic polynomial lambda^2 - tr lambda + det.
    const double tr = a(0, 0) + a(1, 1);
    const double det = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
    const std::complex<double> disc =
        std::sqrt(std::complex<double>(tr * tr - 4.0 * det, 0.0));
    return {0.5 * (tr + disc), 0.5 * (tr - disc)};
  }
  Eigen::EigenSolver<Mat> solver(a, /*computeEigenvectors=*/false);
  if (solver.info() != Eigen::Success)
    throw NumericError("spectrum_check: eigensolver failed at " +
                       format_point(where));
  std::vector<std::complex<double>> out;
  for (Eigen::Index i = 0; i < n; ++i) out.push_back(solver.eigenvalues()[i]);
  return out;
}

}  // namespace detail

/// Flags every sample point whose Jacobian has an eigenvalue within `tol`
/// of the closed negative real axis. `jac` maps a point to a square matrix.
template <class JacobianProvider>
SpectrumReport spectrum_check(JacobianProvider&& jac,
                              const std::vector<Vec>& sample_points,
                              double tol = 1e-9) {
  SpectrumReport rep;
  rep.sample_points = sample_points;
  double min_dist = std::numeric_limits<double>::infinity();
  for (const auto& p : sample_points) {
    const Mat a = jac(p);
    double d = std::numeric_limits<double>::infinity();
    for (const auto& lambda : detail::eigenvalues(a, p))
      d = std::min(d, detail::distance_to_negative_axis(lambda));
    min_dist = std::min(min_dist, d);
    if (d <= tol) rep.violating_points.push_back(p);
  }
  rep.min_real_eigenvalue_margin = min_dist - tol;
  return rep;
}

inline SpectrumReport spectrum_check(const TriangularMap& map,
                                     const std::vector<Vec>& sample_points,
                                     double tol = 1e-9) {
  return spectrum_check([&](const Vec& x) { return map.jacobian(x); },
                        sample_points, tol);
}

/// max_x | det(grad T(x)) * target(T(x)) - source(x) |.
inline double pushforward_residual(const TriangularMap& map,
                                   const std::vector<Vec>& test_points) {
  double worst = 0.0;
  for (const auto& x : test_points) {
    const double det = map.jacobian(x).diagonal().prod();
    const double r =
        std::abs(det * map.target().eval(map.evaluate(x)) - map.source().eval(x));
    worst = std::max(worst, r);
  }
  return worst;
}

}  // namespace flowforge

#endif  // FLOWFORGE_TRANSPORT_HPP
