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

#ifndef FLOWFORGE_FLOW_HPP
#define FLOWFORGE_FLOW_HPP

#include "flowforge/velocity.hpp"

#include <utility>

namespace flowforge {

/// Fixed-step classical RK4 on [0,1].
struct IntegratorConfig {
  int steps = 100;
  int threads = 1;

  void validate() const {
    detail::require(steps >= 4, "IntegratorConfig: steps must be >= 4");
    detail::require(threads >= 1, "IntegratorConfig: threads must be >= 1");
  }
  double dt() const { return 1.0 / steps; }
};

/// Position, l = -int tr(grad_x f) dt and r = int |grad_x f f + d_t f|^2 dt.
/// Since d/dt log det grad X = tr(grad_x f), l equals -log det grad X.
struct AugmentedState {
  Vec x;
  double l = 0.0;
  double r = 0.0;

  double log_det() const { return -l; }
};

/// One RK4 knot of a trajectory.
struct TrajectoryPoint {
  double t = 0.0;
  AugmentedState state;
};

namespace detail {

template <class F>
concept HasValueAndJacobian = requires(const F& f, const Vec& y, double t) {
  { f.value_and_jacobian(y, t) } -> std::convertible_to<std::pair<Vec, Mat>>;
};

template <VelocityField F>
std::pair<Vec, Mat> value_and_jacobian(const F& field, const Vec& y, double t) {
  if constexpr (HasValueAndJacobian<F>) {
    return field.value_and_jacobian(y, t);
  } else {
    return {field.value(y, t), field.jacobian(y, t)};
  }
}

/// Right-hand side of the augmented system at one stage.
struct AugmentedRate {
  Vec dx;
  double dl = 0.0;
  double dr = 0.0;
};

template <VelocityField F>
AugmentedRate augmented_rate(const F& field, const Vec& y, double t) {
  const auto [f, jac] = value_and_jacobian(field, y, t);
  const int d = field.dim();
  const Vec acc = jac.leftCols(d) * f + jac.col(d);
  return {f, -jac.leftCols(d).trace(), acc.squaredNorm()};
}

// Rethrows field errors with the trajectory they occurred on.
template <class Fn>
auto with_context(const Vec& x0, double t, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const DomainError& e) {
    throw DomainError(std::string(e.what()) + " [trajectory from " +
                      format_point(x0) + ", t=" + std::to_string(t) + "]");
  } catch (const NumericError& e) {
    throw NumericError(std::string(e.what()) + " [trajectory from " +
                       format_point(x0) + ", t=" + std::to_string(t) + "]");
  }
}

template <VelocityField F>
Vec rk4_step(const F& field, const Vec& y, double t, double h) {
  const Vec k1 = field.value(y, t);
  const Vec k2 = field.value(y + 0.5 * h * k1, t + 0.5 * h);
  const Vec k3 = field.value(y + 0.5 * h * k2, t + 0.5 * h);
  const Vec k4 = field.value(y + h * k3, t + h);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <VelocityField F>
AugmentedState rk4_augmented_step(const F& field, const AugmentedState& s,
                                  double t, double h) {
  const auto k1 = augmented_rate(field, s.x, t);
  const auto k2 = augmented_rate(field, s.x + 0.5 * h * k1.dx, t + 0.5 * h);
  const auto k3 = augmented_rate(field, s.x + 0.5 * h * k2.dx, t + 0.5 * h);
  const auto k4 = augmented_rate(field, s.x + h * k3.dx, t + h);
  AugmentedState out;
  out.x = s.x + (h / 6.0) * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx);
  out.l = s.l + (h / 6.0) * (k1.dl + 2.0 * k2.dl + 2.0 * k3.dl + k4.dl);
  // |h| keeps r nondecreasing when stepping backwards in time.
  out.r = s.r + (std::abs(h) / 6.0) * (k1.dr + 2.0 * k2.dr + 2.0 * k3.dr + k4.dr);
  return out;
}

}  // namespace detail

/// X(x0, t_end) for dX/dt = f(X, t), X(0) = x0. The RK4 grid is the one of
/// [0,1] with `cfg.steps` steps, truncated (last step shortened) at t_end.
template <VelocityField F>
Vec integrate_flow(const F& field, const Vec& x0, double t_end,
                   const IntegratorConfig& cfg = {}) {
  cfg.validate();
  detail::require(x0.size() == field.dim(), "integrate_flow: bad dim");
  if (!(t_end >= 0.0 && t_end <= 1.0))
    throw DomainError("integrate_flow: t_end outside [0,1]");
  const double h = cfg.dt();
  Vec y = x0;
  double t = 0.0;
  for (int n = 0; n < cfg.steps && t < t_end; ++n) {
    const double step = std::min(h, t_end - t);
    y = detail::with_context(x0, t, [&] { return detail::rk4_step(field, y, t, step); });
    t = (n + 1 == cfg.steps) ? 1.0 : std::min(t_end, (n + 1) * h);
  }
  if (!y.allFinite())
    throw NumericError("integrate_flow: non-finite state from " +
                       detail::format_point(x0));
  return y;
}

template <VelocityField F>
Vec integrate_flow(const F& field, const Vec& x0,
                   const IntegratorConfig& cfg = {}) {
  return integrate_flow(field, x0, 1.0, cfg);
}

/// Solves the flow from t=1 back to t=0 on the same grid, i.e. X(., 1)^{-1}(y).
template <VelocityField F>
Vec integrate_backward(const F& field, const Vec& y, const IntegratorConfig& cfg = {}) {
  cfg.validate();
  detail::require(y.size() == field.dim(), "integrate_backward: bad dim");
  const double h = cfg.dt();
  Vec x = y;
  for (int n = cfg.steps; n > 0; --n) {
    const double t = n * h;
    x = detail::with_context(y, t, [&] { return detail::rk4_step(field, x, t, -h); });
  }
  if (!x.allFinite())
    throw NumericError("integrate_backward: non-finite state from " +
                       detail::format_point(y));
  return x;
}

/// Joint RK4 solve of (X, l, r) to t = 1.
template <VelocityField F>
AugmentedState integrate_augmented(const F& field, const Vec& x0,
                                   const IntegratorConfig& cfg = {}) {
  cfg.validate();
  detail::require(x0.size() == field.dim(), "integrate_augmented: bad dim");
  const double h = cfg.dt();
  AugmentedState s{x0, 0.0, 0.0};
  for (int n = 0; n < cfg.steps; ++n) {
    const double t = n * h;
    s = detail::with_context(x0, t,
                             [&] { return detail::rk4_augmented_step(field, s, t, h); });
  }
  if (!s.x.allFinite() || !std::isfinite(s.l) || !std::isfinite(s.r))
    throw NumericError("integrate_augmented: non-finite state from " +
                       detail::format_point(x0));
  return s;
}

/// Backward augmented solve from y at t=1. The returned state holds the
/// preimage x = X(., 1)^{-1}(y), and l, r of the forward trajectory
/// x -> y, so that the pushforward density at y is source(x) * exp(l).
template <VelocityField F>
AugmentedState integrate_augmented_backward(const F& field, const Vec& y,
                                            const IntegratorConfig& cfg = {}) {
  cfg.validate();
  detail::require(y.size() == field.dim(), "integrate_augmented_backward: bad dim");
  const double h = cfg.dt();
  AugmentedState s{y, 0.0, 0.0};
  for (int n = cfg.steps; n > 0; --n) {
    const double t = n * h;
    s = detail::with_context(y, t,
                             [&] { return detail::rk4_augmented_step(field, s, t, -h); });
  }
  // Integrating dl/dt backwards accumulated l(0) - l(1) = -l_forward.
  s.l = -s.l;
  if (!s.x.allFinite() || !std::isfinite(s.l) || !std::isfinite(s.r))
    throw NumericError("integrate_augmented_backward: non-finite state from " +
                       detail::format_point(y));
  return s;
}

/// All RK4 knots t_n = n/N of the augmented trajectory, t_0 included.
template <VelocityField F>
std::vector<TrajectoryPoint> trajectory(const F& field, const Vec& x0,
                                        const IntegratorConfig& cfg = {}) {
  cfg.validate();
  detail::require(x0.size() == field.dim(), "trajectory: bad dim");
  const double h = cfg.dt();
  std::vector<TrajectoryPoint> out;
  out.reserve(cfg.steps + 1);
  AugmentedState s{x0, 0.0, 0.0};
  out.push_back({0.0, s});
  for (int n = 0; n < cfg.steps; ++n) {
    const double t = n * h;
    s = detail::with_context(x0, t,
                             [&] { return detail::rk4_augmented_step(field, s, t, h); });
    out.push_back({(n + 1) * h, s});
  }
  return out;
}

/// integrate_flow over many starting points; cfg.threads workers.
template <VelocityField F>
std::vector<Vec> integrate_flow_batch(const F& field, const std::vector<Vec>& x0,
                                      const IntegratorConfig& cfg = {}) {
  std::vector<Vec> out(x0.size());
  detail::parallel_for(x0.size(), cfg.threads,
                       [&](std::size_t i) { out[i] = integrate_flow(field, x0[i], cfg); });
  return out;
}

template <VelocityField F>
std::vector<AugmentedState> integrate_augmented_batch(const F& field,
                                                      const std::vector<Vec>& x0,
                                                      const IntegratorConfig& cfg = {}) {
  std::vector<AugmentedState> out(x0.size());
  detail::parallel_for(x0.size(), cfg.threads, [&](std::size_t i) {
    out[i] = integrate_augmented(field, x0[i], cfg);
  });
  return out;
}

}  // namespace flowforge

#endif  // FLOWFORGE_FLOW_HPP
