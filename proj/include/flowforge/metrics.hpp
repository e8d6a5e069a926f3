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

#ifndef FLOWFORGE_METRICS_HPP
#define FLOWFORGE_METRICS_HPP

#include "flowforge/objective.hpp"

#include <Eigen/SVD>

#include <limits>
#include <map>
#include <numeric>

namespace flowforge {

namespace detail {

inline void require_same_grid(const GridDensity& p, const GridDensity& q,
                              const char* what) {
  if (p.dim() != q.dim() || p.resolution() != q.resolution())
    throw ArgumentError(std::string(what) + ": densities must share dim and resolution");
}

// Trapezoid weights of the tensor grid, in the storage order of values().
inline std::vector<double> trapezoid_weights(int dim, int m) {
  const double h = 1.0 / (m - 1);
  std::vector<double> w1(m, h);
  w1.front() = w1.back() = 0.5 * h;
  std::size_t n = 1;
  for (int k = 0; k < dim; ++k) n *= static_cast<std::size_t>(m);
  std::vector<double> w(n);
  for (std::size_t idx = 0; idx < n; ++idx) {
    std::size_t r = idx;
    double v = 1.0;
    for (int k = 0; k < dim; ++k) {
      v *= w1[r % m];
      r /= m;
    }
    w[idx] = v;
  }
  return w;
}

}  // namespace detail

/// (int (p - q)^2)^{1/2} by the trapezoid rule on the shared grid.
inline double l2_density_distance(const GridDensity& p, const GridDensity& q) {
  detail::require_same_grid(p, q, "l2_density_distance");
  const auto w = detail::trapezoid_weights(p.dim(), p.resolution());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = p.values()[i] - q.values()[i];
    s += w[i] * d * d;
  }
  return std::sqrt(s);
}

/// int (p - q)^2 / q.
inline double chi2_divergence(const GridDensity& p, const GridDensity& q) {
  detail::require_same_grid(p, q, "chi2_divergence");
  const auto w = detail::trapezoid_weights(p.dim(), p.resolution());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = p.values()[i] - q.values()[i];
    s += w[i] * d * d / q.values()[i];
  }
  return s;
}

/// int p log(p / q).
inline double kl_divergence(const GridDensity& p, const GridDensity& q) {
  detail::require_same_grid(p, q, "kl_divergence");
  const auto w = detail::trapezoid_weights(p.dim(), p.resolution());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double a = p.values()[i], b = q.values()[i];
    s += w[i] * a * std::log(a / b);
  }
  // The discrete sum can undershoot zero by rounding when p == q.
  return std::max(s, 0.0);
}

namespace detail {

// Minimum-cost perfect assignment (Hungarian method with potentials), O(n^3).
inline std::vector<int> min_cost_assignment(const Mat& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> match(n);
  for (int j = 1; j <= n; ++j) match[p[j] - 1] = j - 1;
  return match;
}

// Whether a perfect matching exists using only edges with cost <= limit.
inline bool has_perfect_matching(const Mat& cost, double limit) {
  const int n = static_cast<int>(cost.rows());
  std::vector<int> match_r(n, -1);
  std::vector<char> seen;
  std::function<bool(int)> augment = [&](int i) {
    for (int j = 0; j < n; ++j) {
      if (cost(i, j) > limit || seen[j]) continue;
      seen[j] = 1;
      if (match_r[j] < 0 || augment(match_r[j])) {
        match_r[j] = i;
        return true;
      }
    }
    return false;
  };
  for (int i = 0; i < n; ++i) {
    seen.assign(n, 0);
    if (!augment(i)) return false;
  }
  return true;
}

}  // namespace detail

/// Empirical Wasserstein distance of order p in [1, inf] between two
/// equally sized sample sets. One-dimensional samples use the sorted
/// (quantile) coupling; higher dimensions solve the assignment problem
/// exactly for n <= 256.
inline double wasserstein(const std::vector<Vec>& a, const std::vector<Vec>& b,
                          double p) {
  if (a.size() != b.size())
    throw ArgumentError("wasserstein: sample counts differ (" +
                        std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
  detail::require(!a.empty(), "wasserstein: empty sample sets");
  detail::require(p >= 1.0, "wasserstein: order must be >= 1");
  const std::size_t n = a.size();
  const auto d = a.front().size();
  for (std::size_t i = 0; i < n; ++i)
    detail::require(a[i].size() == d && b[i].size() == d,
                    "wasserstein: inconsistent sample dimensions");
  if (n > 4096) throw CapabilityError("wasserstein: at most 4096 samples supported");
  const bool inf_order = std::isinf(p);

  if (d == 1) {
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = a[i][0];
      y[i] = b[i][0];
    }
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double diff = std::abs(x[i] - y[i]);
      acc = inf_order ? std::max(acc, diff) : acc + std::pow(diff, p);
    }
    return inf_order ? acc : std::pow(acc / static_cast<double>(n), 1.0 / p);
  }

  if (n > 256)
    throw CapabilityError("wasserstein: exact assignment in d >= 2 is limited to n <= 256");
  Mat dist(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) dist(i, j) = (a[i] - b[j]).norm();

  if (inf_order) {
    std::vector<double> levels(dist.data(), dist.data() + dist.size());
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    std::size_t lo = 0, hi = levels.size() - 1;
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (detail::has_perfect_matching(dist, levels[mid])) hi = mid;
      else lo = mid + 1;
    }
    return levels[lo];
  }

  const Mat cost = dist.array().pow(p).matrix();
  const auto match = detail::min_cost_assignment(cost);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += cost(i, match[i]);
  return std::pow(acc / static_cast<double>(n), 1.0 / p);
}

/// Outcome of a numerical bound check.
struct BoundCheckResult {
  double measured = 0.0;
  double bound = 0.0;
  bool satisfied = false;
  double slack = 0.0;
  /// The sampled quantities that entered the bound.
  std::map<std::string, double> details;

  static BoundCheckResult make(double measured, double bound) {
    BoundCheckResult r;
    r.measured = measured;
    r.bound = bound;
    r.satisfied = measured <= bound + 1e-12;
    r.slack = bound - measured;
    return r;
  }
};

struct GronwallOptions {
  int flow_points = 200;
  int sup_points = 10000;
  int lipschitz_points = 1000;
  double inflation = 1.1;
  /// Samples for the field estimates keep this distance from the faces.
  double margin = 1e-3;
};

namespace detail {

// Quasi-random space-time points (y, t), y in [margin, 1-margin]^d.
inline std::vector<std::pair<Vec, double>> spacetime_samples(int dim, int n,
                                                             double margin,
                                                             std::size_t offset = 1) {
  const auto pts = halton_points(dim + 1, static_cast<std::size_t>(n), offset);
  std::vector<std::pair<Vec, double>> out;
  out.reserve(pts.size());
  for (const auto& p : pts)
    out.emplace_back((margin + (1.0 - 2.0 * margin) * p.head(dim).array()).matrix(),
                     p[dim]);
  return out;
}

inline double spectral_norm(const Mat& a) {
  if (a.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(a);
  return svd.singularValues()(0);
}

}  // namespace detail

/// Checks sup_x |X_f(x,1) - X_g(x,1)| <= eps * e^L with eps the sampled
/// sup-distance of the fields and L the sampled spatial Lipschitz constant
/// of f, both inflated by `opts.inflation`. Starting points are `source`
/// quantiles of a Halton sequence.
template <VelocityField F, VelocityField G>
BoundCheckResult verify_gronwall(const F& f, const G& g, const GridDensity& source,
                                 const IntegratorConfig& cfg = {},
                                 const GronwallOptions& opts = {}) {
  cfg.validate();
  const int d = f.dim();
  detail::require(g.dim() == d && source.dim() == d, "verify_gronwall: dim mismatch");

  const auto sup_pts = detail::spacetime_samples(d, opts.sup_points, opts.margin);
  std::vector<double> diff(sup_pts.size());
  detail::parallel_for(sup_pts.size(), cfg.threads, [&](std::size_t i) {
    const auto& [y, t] = sup_pts[i];
    diff[i] = (f.value(y, t) - g.value(y, t)).norm();
  });
  const double eps_hat = opts.inflation * *std::max_element(diff.begin(), diff.end());

  const auto lip_pts = detail::spacetime_samples(d, opts.lipschitz_points, opts.margin,
                                                 static_cast<std::size_t>(opts.sup_points) + 1);
  std::vector<double> lips(lip_pts.size());
  detail::parallel_for(lip_pts.size(), cfg.threads, [&](std::size_t i) {
    const auto& [y, t] = lip_pts[i];
    lips[i] = detail::spectral_norm(f.jacobian(y, t).leftCols(d));
  });
  const double lip_hat = opts.inflation * *std::max_element(lips.begin(), lips.end());

  std::vector<Vec> starts;
  for (const auto& u : halton_points(d, static_cast<std::size_t>(opts.flow_points)))
    starts.push_back(source.from_uniform(u));
  std::vector<double> dev(starts.size());
  detail::parallel_for(starts.size(), cfg.threads, [&](std::size_t i) {
    dev[i] = (integrate_flow(f, starts[i], cfg) - integrate_flow(g, starts[i], cfg)).norm();
  });
  const double measured = *std::max_element(dev.begin(), dev.end());

  auto res = BoundCheckResult::make(measured, eps_hat * std::exp(lip_hat));
  res.details = {{"epsilon_hat", eps_hat}, {"lipschitz_hat", lip_hat}};
  return res;
}

struct L2StabilityOptions {
  /// Midpoint quadrature nodes per axis for the measured distance.
  int nodes_per_axis = 128;
  int sup_points = 4000;
  double inflation = 1.1;
  double margin = 1e-3;
  double fd_step = 1e-4;
};

/// Density of the straight-line flow at time t: source(x) / det grad T_t(x)
/// with x = T_t^{-1}(y). T is triangular so the determinant is the product
/// of (1 - t) + t dT_k/dx_k.
inline double straightline_density(const StraightLineField& f, const Vec& y, double t) {
  const auto& map = f.map();
  const double s = f.profile().s(t);
  const Vec x = map.inverse_displacement(y, s, f.inversion_tolerance());
  const Vec diag = map.diagonal_density_ratio(x);
  double det = 1.0;
  for (Eigen::Index k = 0; k < diag.size(); ++k) det *= (1.0 - s) + s * diag[k];
  return map.source().eval(x) / det;
}

/// Pushforward density of `source` under the time-one flow of g, evaluated
/// at y by integrating the augmented system backwards from y.
template <VelocityField G>
double pushforward_density(const G& g, const GridDensity& source, const Vec& y,
                           const IntegratorConfig& cfg) {
  const auto s = integrate_augmented_backward(g, y, cfg);
  return source.eval_clamped(s.x) * std::exp(s.l);
}

/// Checks the L2 stability estimate
///
///   || eta_g(., 1) - target ||^2 <= delta^2 (sqrt(d) G + d H)^2 e^{1 + D}
///
/// where eta_g is the pushforward of the source under g, delta the sampled
/// sup of |g - f| and ||grad_x g - grad_x f||, G and H the sampled sups of
/// |grad eta_f| and eta_f, and D the sampled sup of |div g|. The perturbation
/// g - f must vanish on the faces of the cube.
template <VelocityField G>
BoundCheckResult verify_l2_stability(const StraightLineField& f, const G& g,
                                     const GridDensity& source,
                                     const IntegratorConfig& cfg = {},
                                     const L2StabilityOptions& opts = {}) {
  cfg.validate();
  const int d = f.dim();
  detail::require(g.dim() == d && source.dim() == d, "verify_l2_stability: dim mismatch");
  const GridDensity& target = f.map().target();

  const auto nodes = midpoint_nodes(d, opts.nodes_per_axis);
  std::vector<double> sq(nodes.size());
  detail::parallel_for(nodes.size(), cfg.threads, [&](std::size_t i) {
    const double diff = pushforward_density(g, source, nodes[i], cfg) - target.eval(nodes[i]);
    sq[i] = diff * diff;
  });
  const double measured =
      std::accumulate(sq.begin(), sq.end(), 0.0) / static_cast<double>(nodes.size());

  const auto pts = detail::spacetime_samples(d, opts.sup_points, opts.margin);
  std::vector<double> delta(pts.size()), grad_eta(pts.size()), eta(pts.size()),
      div(pts.size());
  const double hstep = opts.fd_step;
  detail::parallel_for(pts.size(), cfg.threads, [&](std::size_t i) {
    const auto& [y, t] = pts[i];
    const Vec fv = f.value(y, t), gv = g.value(y, t);
    const Mat fj = f.jacobian(y, t).leftCols(d), gj = g.jacobian(y, t).leftCols(d);
    delta[i] = std::max((fv - gv).norm(), detail::spectral_norm(fj - gj));
    div[i] = std::abs(gj.trace());
    eta[i] = straightline_density(f, y, t);
    Vec grad(d);
    for (int k = 0; k < d; ++k) {
      Vec yp = y, ym = y;
      yp[k] = std::min(1.0, y[k] + hstep);
      ym[k] = std::max(0.0, y[k] - hstep);
      grad[k] = (straightline_density(f, yp, t) - straightline_density(f, ym, t)) /
                (yp[k] - ym[k]);
    }
    grad_eta[i] = grad.norm();
  });
  auto sup = [&](const std::vector<double>& v) {
    return opts.inflation * *std::max_element(v.begin(), v.end());
  };
  const double delta_hat = sup(delta), g_hat = sup(grad_eta), h_hat = sup(eta),
               d_hat = sup(div);
  const double c = std::sqrt(static_cast<double>(d)) * g_hat + d * h_hat;
  const double bound = delta_hat * delta_hat * c * c * std::exp(1.0 + d_hat);
  auto res = BoundCheckResult::make(measured, bound);
  res.details = {{"delta_hat", delta_hat},
                 {"grad_eta_hat", g_hat},
                 {"eta_hat", h_hat},
                 {"divergence_hat", d_hat}};
  return res;
}

}  // namespace flowforge

#endif  // FLOWFORGE_METRICS_HPP
