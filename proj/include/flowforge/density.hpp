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

#ifndef FLOWFORGE_DENSITY_HPP
#define FLOWFORGE_DENSITY_HPP

#include "flowforge/common.hpp"

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <utility>

namespace flowforge {

class GridDensity;

/// The one-dimensional conditional law of coordinate k given a fixed prefix
/// x_1..x_{k-1}. The conditional density is the multilinear interpolant of
/// the partial marginal restricted to the prefix, divided by its integral;
/// the CDF is the exact integral of that piecewise-linear profile.
///
/// A slice is a view: it must not outlive the density that produced it.
class ConditionalSlice {
 public:
  /// Unnormalized partial-marginal value at node j of axis k.
  double node_value(int j) const {
    double v = 0.0;
    for (const auto& [offset, w] : corners_) v += w * hat_[offset + j];
    return v;
  }

  /// Unnormalized cumulative integral up to node j.
  double node_cumulative(int j) const {
    double v = 0.0;
    for (const auto& [offset, w] : corners_) v += w * cum_[offset + j];
    return v;
  }

  /// Normalizer of the slice, i.e. the interpolated marginal of the prefix.
  double total() const { return total_; }

  double density(double x) const {
    const auto [j, s] = locate(x);
    const double v0 = node_value(j), v1 = node_value(j + 1);
    return (v0 + s * (v1 - v0)) / total_;
  }

  double cdf(double x) const {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const auto [j, s] = locate(x);
    const double v0 = node_value(j), v1 = node_value(j + 1);
    const double c = node_cumulative(j) + h_ * s * (v0 + 0.5 * s * (v1 - v0));
    return std::clamp(c / total_, 0.0, 1.0);
  }

  /// Inverse CDF: bisection over grid cells, then the exact root of the
  /// quadratic CDF piece inside the bracketing cell.
  double inverse(double u) const {
    if (!(u > 0.0)) return 0.0;
    if (u >= 1.0) return 1.0;
    const double target = u * total_;
    int lo = 0, hi = m_ - 1;
    while (hi - lo > 1) {
      const int mid = (lo + hi) / 2;
      if (node_cumulative(mid) <= target)
        lo = mid;
      else
        hi = mid;
    }
    const double v0 = node_value(lo), v1 = node_value(lo + 1);
    const double rem = target - node_cumulative(lo);
    // h*(v0*s + (v1-v0)*s^2/2) = rem, with v0 > 0; stable root form.
    const double a = 0.5 * h_ * (v1 - v0);
    const double b = h_ * v0;
    const double disc = std::max(b * b + 4.0 * a * rem, 0.0);
    const double s = std::clamp(2.0 * rem / (b + std::sqrt(disc)), 0.0, 1.0);
    return std::clamp((lo + s) * h_, 0.0, 1.0);
  }

 private:
  friend class GridDensity;

  std::pair<int, double> locate(double x) const {
    const double pos = std::clamp(x, 0.0, 1.0) / h_;
    int j = static_cast<int>(std::floor(pos));
    j = std::clamp(j, 0, m_ - 2);
    return {j, pos - j};
  }

  std::vector<std::pair<std::size_t, double>> corners_;
  const double* hat_ = nullptr;
  const double* cum_ = nullptr;
  double total_ = 1.0;
  double h_ = 1.0;
  int m_ = 0;
};

/// A strictly positive probability density on [0,1]^d tabulated on a uniform
/// tensor grid of m points per axis (nodes i/(m-1)), evaluated by multilinear
/// interpolation. Values are stored row-major with axis 0 slowest.
///
/// The constructor rescales the input so the trapezoid integral is exactly 1
/// and records the extreme values as the lower/upper density bounds. The
/// object is immutable afterwards.
class GridDensity {
 public:
  GridDensity(int dim, int resolution, std::vector<double> values)
      : dim_(dim), m_(resolution), values_(std::move(values)) {
    detail::require(dim_ >= 1, "GridDensity: dim must be >= 1");
    detail::require(m_ >= 8, "GridDensity: resolution must be >= 8");
    std::size_t expected = 1;
    for (int k = 0; k < dim_; ++k) expected *= static_cast<std::size_t>(m_);
    detail::require(values_.size() == expected,
                    "GridDensity: expected " + std::to_string(expected) +
                        " values, got " + std::to_string(values_.size()));
    for (double v : values_)
      detail::require(std::isfinite(v) && v > 0.0,
                      "GridDensity: values must be finite and strictly positive");
    h_ = 1.0 / (m_ - 1);
    build_tables();
    normalization_ = hat_[0][0];
    const double inv = 1.0 / normalization_;
    for (double& v : values_) v *= inv;
    for (auto& t : hat_)
      for (double& v : t) v *= inv;
    for (auto& t : cum_)
      for (double& v : t) v *= inv;
    const auto [lo, hi] = std::minmax_element(values_.begin(), values_.end());
    lower_ = *lo;
    upper_ = *hi;
  }

  static GridDensity uniform(int dim, int resolution) {
    std::size_t n = 1;
    for (int k = 0; k < dim; ++k) n *= static_cast<std::size_t>(resolution);
    return GridDensity(dim, resolution, std::vector<double>(n, 1.0));
  }

  /// 1 + amplitude * sin(2*pi*frequency*x) on [0,1].
  static GridDensity sine1d(int resolution, double amplitude = 0.5,
                            int frequency = 1) {
    detail::require(std::abs(amplitude) < 1.0,
                    "sine1d: |amplitude| must be < 1 for positivity");
    return from_function(1, resolution, [=](const Vec& x) {
      return 1.0 + amplitude * std::sin(2.0 * kPi * frequency * x[0]);
    });
  }

  /// Tensor product of one-dimensional factors, one per axis.
  static GridDensity product(
      const std::vector<std::function<double(double)>>& factors,
      int resolution) {
    detail::require(!factors.empty(), "product: need at least one factor");
    return from_function(static_cast<int>(factors.size()), resolution,
                         [&](const Vec& x) {
                           double v = 1.0;
                           for (std::size_t k = 0; k < factors.size(); ++k)
                             v *= factors[k](x[static_cast<Eigen::Index>(k)]);
                           return v;
                         });
  }

  template <class F>
  static GridDensity from_function(int dim, int resolution, F&& f) {
    detail::require(dim >= 1 && resolution >= 2,
                    "from_function: bad grid shape");
    std::size_t n = 1;
    for (int k = 0; k < dim; ++k) n *= static_cast<std::size_t>(resolution);
    std::vector<double> vals(n);
    Vec x(dim);
    const double h = 1.0 / (resolution - 1);
    for (std::size_t idx = 0; idx < n; ++idx) {
      std::size_t r = idx;
      for (int k = dim - 1; k >= 0; --k) {
        x[k] = static_cast<double>(r % resolution) * h;
        r /= resolution;
      }
      vals[idx] = f(x);
    }
    return GridDensity(dim, resolution, std::move(vals));
  }

  int dim() const { return dim_; }
  int resolution() const { return m_; }
  double spacing() const { return h_; }
  double node(int i) const { return i * h_; }
  const std::vector<double>& values() const { return values_; }

  /// Smallest tabulated value (the density's lower bound L2).
  double lower_bound() const { return lower_; }
  /// Largest tabulated value (L1).
  double upper_bound() const { return upper_; }
  /// Trapezoid integral of the raw input values before rescaling.
  double normalization() const { return normalization_; }

  /// Trapezoid integral over the cube; 1 up to rounding.
  double integral() const {
    return hat_[0][0];
  }

  double operator()(const Vec& x) const { return eval(x); }

  /// Multilinear interpolation; throws DomainError outside the cube.
  double eval(const Vec& x) const {
    check_point(x, "GridDensity::eval");
    return interpolate(x);
  }

  /// Nearest-point extension: coordinates are clamped into [0,1].
  double eval_clamped(const Vec& x) const {
    detail::require(x.size() == dim_, "GridDensity::eval_clamped: bad dim");
    return interpolate(x.cwiseMax(0.0).cwiseMin(1.0));
  }

  bool contains(const Vec& x) const {
    return x.size() == dim_ && (x.array() >= 0.0).all() &&
           (x.array() <= 1.0).all();
  }

  /// Gradient of the interpolant with the nearest-point extension; the
  /// component along any clamped axis is zero.
  Vec gradient_clamped(const Vec& x) const {
    detail::require(x.size() == dim_, "GridDensity::gradient: bad dim");
    Vec g = Vec::Zero(dim_);
    std::vector<int> cell(dim_);
    std::vector<double> frac(dim_);
    std::vector<bool> outside(dim_);
    for (int k = 0; k < dim_; ++k) {
      outside[k] = x[k] < 0.0 || x[k] > 1.0;
      const auto [j, s] = locate(std::clamp(x[k], 0.0, 1.0));
      cell[k] = j;
      frac[k] = s;
    }
    const std::size_t ncorner = std::size_t{1} << dim_;
    for (std::size_t c = 0; c < ncorner; ++c) {
      std::size_t idx = 0;
      for (int k = 0; k < dim_; ++k)
        idx = idx * m_ + cell[k] + ((c >> (dim_ - 1 - k)) & 1u);
      const double v = values_[idx];
      for (int a = 0; a < dim_; ++a) {
        if (outside[a]) continue;
        double w = 1.0;
        for (int k = 0; k < dim_; ++k) {
          const bool up = (c >> (dim_ - 1 - k)) & 1u;
          if (k == a)
            w *= (up ? 1.0 : -1.0) / h_;
          else
            w *= up ? frac[k] : 1.0 - frac[k];
        }
        g[a] += w * v;
      }
    }
    return g;
  }

  /// Conditional law of coordinate k (1-based) given x_1..x_{k-1}.
  ConditionalSlice conditional(int k, const Vec& prefix) const {
    detail::require(k >= 1 && k <= dim_,
                    "conditional: axis index k must be in 1.." +
                        std::to_string(dim_));
    detail::require(prefix.size() >= k - 1,
                    "conditional: prefix must have at least k-1 coordinates");
    for (int a = 0; a < k - 1; ++a)
      if (!(prefix[a] >= 0.0 && prefix[a] <= 1.0))
        throw DomainError("conditional: prefix coordinate outside [0,1]: " +
                          detail::format_point(prefix.head(k - 1)));
    ConditionalSlice s;
    s.hat_ = hat_[k].data();
    s.cum_ = cum_[k].data();
    s.h_ = h_;
    s.m_ = m_;
    const int p = k - 1;
    std::vector<int> cell(p);
    std::vector<double> frac(p);
    for (int a = 0; a < p; ++a) {
      const auto [j, f] = locate(prefix[a]);
      cell[a] = j;
      frac[a] = f;
    }
    const std::size_t ncorner = std::size_t{1} << p;
    s.corners_.reserve(ncorner);
    for (std::size_t c = 0; c < ncorner; ++c) {
      double w = 1.0;
      std::size_t idx = 0;
      for (int a = 0; a < p; ++a) {
        const bool up = (c >> (p - 1 - a)) & 1u;
        w *= up ? frac[a] : 1.0 - frac[a];
        idx = idx * m_ + cell[a] + (up ? 1 : 0);
      }
      if (w == 0.0) continue;
      s.corners_.emplace_back(idx * static_cast<std::size_t>(m_), w);
    }
    s.total_ = s.node_cumulative(m_ - 1);
    return s;
  }

  double conditional_cdf(int k, const Vec& prefix, double xk) const {
    check_unit(xk, "conditional_cdf");
    return conditional(k, prefix).cdf(xk);
  }

  double inverse_conditional_cdf(int k, const Vec& prefix, double u) const {
    check_unit(u, "inverse_conditional_cdf");
    return conditional(k, prefix).inverse(u);
  }

  /// Maps a point of the unit cube through the inverse conditional CDFs
  /// (the inverse Rosenblatt transform); uniform input gives a sample.
  Vec from_uniform(const Vec& u) const {
    detail::require(u.size() == dim_, "from_uniform: bad dim");
    Vec x(dim_);
    for (int k = 1; k <= dim_; ++k)
      x[k - 1] = conditional(k, x).inverse(std::clamp(u[k - 1], 0.0, 1.0));
    return x;
  }

  template <class Rng>
  std::vector<Vec> sample(Rng& rng, std::size_t n) const {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<Vec> out;
    out.reserve(n);
    Vec u(dim_);
    for (std::size_t i = 0; i < n; ++i) {
      for (int k = 0; k < dim_; ++k) u[k] = unif(rng);
      out.push_back(from_uniform(u));
    }
    return out;
  }

 private:
  std::pair<int, double> locate(double x) const {
    const double pos = x / h_;
    int j = static_cast<int>(std::floor(pos));
    j = std::clamp(j, 0, m_ - 2);
    return {j, pos - j};
  }

  static void check_unit(double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0))
      throw DomainError(std::string(what) + ": argument " +
                        std::to_string(v) + " outside [0,1]");
  }

  void check_point(const Vec& x, const char* what) const {
    detail::require(x.size() == dim_, std::string(what) + ": expected dim " +
                                          std::to_string(dim_));
    if (!contains(x))
      throw DomainError(std::string(what) + ": point outside [0,1]^d: " +
                        detail::format_point(x));
  }

  double interpolate(const Vec& x) const {
    int cell[16];
    double frac[16];
    std::vector<int> cell_v;
    std::vector<double> frac_v;
    int* cp = cell;
    double* fp = frac;
    if (dim_ > 16) {
      cell_v.resize(dim_);
      frac_v.resize(dim_);
      cp = cell_v.data();
      fp = frac_v.data();
    }
    for (int k = 0; k < dim_; ++k) {
      const auto [j, s] = locate(x[k]);
      cp[k] = j;
      fp[k] = s;
    }
    double v = 0.0;
    const std::size_t ncorner = std::size_t{1} << dim_;
    for (std::size_t c = 0; c < ncorner; ++c) {
      double w = 1.0;
      std::size_t idx = 0;
      for (int k = 0; k < dim_; ++k) {
        const bool up = (c >> (dim_ - 1 - k)) & 1u;
        w *= up ? fp[k] : 1.0 - fp[k];
        idx = idx * m_ + cp[k] + (up ? 1 : 0);
      }
      if (w != 0.0) v += w * values_[idx];
    }
    return v;
  }

  // hat_[k] holds the partial marginal over axes 1..k on the m^k grid
  // (hat_[d] are the values, hat_[0] the total mass); cum_[k] holds the
  // running trapezoid integral of hat_[k] along axis k.
  void build_tables() {
    hat_.assign(dim_ + 1, {});
    cum_.assign(dim_ + 1, {});
    hat_[dim_] = values_;
    for (int k = dim_; k >= 1; --k) {
      const auto& src = hat_[k];
      const std::size_t rows = src.size() / m_;
      auto& cum = cum_[k];
      cum.resize(src.size());
      auto& next = hat_[k - 1];
      next.resize(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* v = src.data() + r * m_;
        double* c = cum.data() + r * m_;
        c[0] = 0.0;
        for (int j = 1; j < m_; ++j) c[j] = c[j - 1] + 0.5 * h_ * (v[j - 1] + v[j]);
        next[r] = c[m_ - 1];
      }
    }
  }

  int dim_;
  int m_;
  double h_ = 0.0;
  std::vector<double> values_;
  std::vector<std::vector<double>> hat_;
  std::vector<std::vector<double>> cum_;
  double normalization_ = 1.0;
  double lower_ = 0.0;
  double upper_ = 0.0;
};

/// The conditional marginal f_k(x_1..x_{k-1}, x_k) as a function on [0,1]^k.
class ConditionalMarginal {
 public:
  ConditionalMarginal(const GridDensity& density, int k)
      : density_(&density), k_(k) {
    detail::require(k >= 1 && k <= density.dim(),
                    "marginal: axis index k must be in 1.." +
                        std::to_string(density.dim()));
  }

  int axis() const { return k_; }

  double operator()(const Vec& x) const {
    detail::require(x.size() >= k_, "marginal: point needs k coordinates");
    if (!(x[k_ - 1] >= 0.0 && x[k_ - 1] <= 1.0))
      throw DomainError("marginal: coordinate outside [0,1]");
    return density_->conditional(k_, x).density(x[k_ - 1]);
  }

 private:
  const GridDensity* density_;
  int k_;
};

inline ConditionalMarginal marginal(const GridDensity& density, int k) {
  return ConditionalMarginal(density, k);
}

}  // namespace flowforge

#endif  // FLOWFORGE_DENSITY_HPP
