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

#ifndef FLOWFORGE_OBJECTIVE_HPP
#define FLOWFORGE_OBJECTIVE_HPP

#include "flowforge/flow.hpp"

#include <array>
#include <atomic>
#include <chrono>
#include <memory>
#include <optional>

namespace flowforge {

/// Log-density evaluated at flow endpoints. Endpoints outside the cube use
/// the nearest-point extension and are counted in `outside_count`.
class EndpointDensity {
 public:
  explicit EndpointDensity(const GridDensity& density)
      : density_(&density), outside_(std::make_shared<std::atomic<long>>(0)) {}

  int dim() const { return density_->dim(); }
  const GridDensity& density() const { return *density_; }

  double log_value(const Vec& x) const {
    if (!density_->contains(x)) outside_->fetch_add(1, std::memory_order_relaxed);
    return std::log(density_->eval_clamped(x));
  }

  Vec grad_log(const Vec& x) const {
    return density_->gradient_clamped(x) / density_->eval_clamped(x);
  }

  long outside_count() const { return outside_->load(); }
  void reset_outside_count() const { outside_->store(0); }

 private:
  const GridDensity* density_;
  std::shared_ptr<std::atomic<long>> outside_;
};

/// SamplesToSource flows data samples to a known source density;
/// SourceToTarget flows source samples to a target density known up to
/// normalization.
enum class Direction { SamplesToSource, SourceToTarget };
enum class Optimizer { Sgd, Adam };

struct TrainConfig {
  double lambda = 0.1;
  double learning_rate = 1e-2;
  int batch_size = 32;
  int max_iters = 1000;
  IntegratorConfig integrator{};
  std::uint64_t seed = 0;
  Direction direction = Direction::SourceToTarget;
  Optimizer optimizer = Optimizer::Adam;
  int threads = 1;
  /// Samples for the final held-out estimates.
  int holdout_samples = 4096;
  /// Record wall-clock time per iteration (breaks byte-identical reports).
  bool wallclock = false;

  void validate() const {
    detail::require(lambda >= 0.0, "TrainConfig: lambda must be >= 0");
    detail::require(learning_rate > 0.0, "TrainConfig: learning_rate must be > 0");
    detail::require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    detail::require(max_iters >= 1, "TrainConfig: max_iters must be >= 1");
    detail::require(threads >= 1, "TrainConfig: threads must be >= 1");
    detail::require(holdout_samples >= 1, "TrainConfig: holdout_samples must be >= 1");
    integrator.validate();
  }
};

struct TrainRecord {
  int iter = 0;
  double erm_loss = 0.0;
  double kl_estimate = 0.0;
  double reg_estimate = 0.0;
  double wallclock_ms = 0.0;
};

struct TrainReport {
  std::vector<TrainRecord> history;
  ResNetField field;
  /// Held-out KL estimate. For sample data the data entropy is
  /// unknown and this is the held-out negative log-likelihood instead.
  double final_kl_estimate = 0.0;
  double final_reg_estimate = 0.0;
  bool diverged = false;
  std::string divergence_message;
  long outside_evaluations = 0;
};

/// Per-sample augmented functional -log q(X(x,1)) + l(1) + lambda r(1).
struct SampleLoss {
  double loss = 0.0;
  double log_q = 0.0;
  AugmentedState state;
};

template <VelocityField F>
SampleLoss sample_loss(const F& field, const Vec& x, const EndpointDensity& end,
                       double lambda, const IntegratorConfig& cfg) {
  SampleLoss s;
  s.state = integrate_augmented(field, x, cfg);
  s.log_q = end.log_value(s.state.x);
  s.loss = -s.log_q + s.state.l + lambda * s.state.r;
  return s;
}

/// Mean of the per-sample functional over the batch. The constant
/// E[log p(x)] of the starting density is dropped.
template <VelocityField F>
double erm_loss(const F& field, const std::vector<Vec>& batch,
                const EndpointDensity& end, double lambda,
                const IntegratorConfig& cfg = {}) {
  detail::require(!batch.empty(), "erm_loss: empty batch");
  detail::require(lambda >= 0.0, "erm_loss: lambda must be >= 0");
  std::vector<double> per(batch.size());
  detail::parallel_for(batch.size(), cfg.threads, [&](std::size_t i) {
    per[i] = sample_loss(field, batch[i], end, lambda, cfg).loss;
  });
  double sum = 0.0;
  for (double v : per) sum += v;
  const double loss = sum / static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw NumericError("erm_loss: non-finite loss");
  return loss;
}

namespace detail {

// Augmented rate of one recorded network evaluation.
inline AugmentedRate tape_rate(const ResNetField::Tape& tp, int d) {
  const Vec acc = tp.jf.leftCols(d) * tp.f + tp.jf.col(d);
  return {tp.f, -tp.jf.leftCols(d).trace(), acc.squaredNorm()};
}

// Reverse pass through one stage F(y,t) = (f, -tr grad_y f, |grad_y f f + d_t f|^2).
inline Vec stage_vjp(const ResNetField& field, const ResNetField::Tape& tp,
                     const Vec& f_bar, double l_bar, double r_bar,
                     ResNetGradient& grad) {
  const int d = field.dim();
  const auto jx = tp.jf.leftCols(d);
  const Vec acc = jx * tp.f + tp.jf.col(d);
  const Vec acc_bar = 2.0 * r_bar * acc;
  Mat jac_bar(d, d + 1);
  jac_bar.leftCols(d) = acc_bar * tp.f.transpose();
  jac_bar.leftCols(d).diagonal().array() -= l_bar;
  jac_bar.col(d) = acc_bar;
  const Vec fb = f_bar + jx.transpose() * acc_bar;
  return field.backward(tp, fb, jac_bar, grad).head(d);
}

inline Vec stage_vjp(const ResNetField& field, const Vec& y, double t,
                     const Vec& f_bar, double l_bar, double r_bar,
                     ResNetGradient& grad) {
  return stage_vjp(field, field.record(y, t), f_bar, l_bar, r_bar, grad);
}

}  // namespace detail

struct LossAndGradient {
  double loss = 0.0;
  double mean_l = 0.0;
  double mean_r = 0.0;
  double mean_log_q = 0.0;
  Vec gradient;  // flattened like ResNetField::parameters()
};

/// Loss and its exact gradient with respect to all weights, obtained by
/// reverse-mode differentiation of the discrete RK4 solve.
inline LossAndGradient loss_and_gradient(const ResNetField& field,
                                         const std::vector<Vec>& batch,
                                         const EndpointDensity& end, double lambda,
                                         const IntegratorConfig& cfg = {}) {
  cfg.validate();
  detail::require(!batch.empty(), "loss_gradient: empty batch");
  detail::require(lambda >= 0.0, "loss_gradient: lambda must be >= 0");
  const int d = field.dim();
  const int N = cfg.steps;
  const double h = cfg.dt();
  const std::size_t B = batch.size();

  std::vector<Vec> grads(B);
  std::vector<SampleLoss> results(B);
  detail::parallel_for(B, cfg.threads, [&](std::size_t b) {
    // Forward pass, keeping the network tape of every stage.
    std::vector<std::array<ResNetField::Tape, 4>> tapes(N);
    AugmentedState s{batch[b], 0.0, 0.0};
    for (int n = 0; n < N; ++n) {
      const double t = n * h;
      auto& tp = tapes[n];
      tp[0] = field.record(s.x, t);
      const auto k1 = detail::tape_rate(tp[0], d);
      tp[1] = field.record(s.x + 0.5 * h * k1.dx, t + 0.5 * h);
      const auto k2 = detail::tape_rate(tp[1], d);
      tp[2] = field.record(s.x + 0.5 * h * k2.dx, t + 0.5 * h);
      const auto k3 = detail::tape_rate(tp[2], d);
      tp[3] = field.record(s.x + h * k3.dx, t + h);
      const auto k4 = detail::tape_rate(tp[3], d);
      s.x += (h / 6.0) * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx);
      s.l += (h / 6.0) * (k1.dl + 2.0 * k2.dl + 2.0 * k3.dl + k4.dl);
      s.r += (h / 6.0) * (k1.dr + 2.0 * k2.dr + 2.0 * k3.dr + k4.dr);
    }
    SampleLoss& res = results[b];
    res.state = s;
    res.log_q = end.log_value(s.x);
    res.loss = -res.log_q + s.l + lambda * s.r;

    // Reverse pass. l and r enter the loss linearly, so their cotangents
    // stay 1 and lambda at every step.
    ResNetGradient g = field.zero_gradient();
    Vec x_bar = -end.grad_log(s.x);
    const double w[4] = {1.0, 2.0, 2.0, 1.0};
    // Stage k feeds stage k+1 through y_{k+1} = x + c_{k+1} h k_k.
    const double c[4] = {0.5, 0.5, 1.0, 0.0};
    for (int n = N - 1; n >= 0; --n) {
      Vec prev_bar = x_bar;
      Vec y_bar = Vec::Zero(d);
      for (int k = 3; k >= 0; --k) {
        const Vec f_bar = (h / 6.0) * w[k] * x_bar + c[k] * h * y_bar;
        y_bar = detail::stage_vjp(field, tapes[n][k], f_bar, h / 6.0 * w[k],
                                  h / 6.0 * w[k] * lambda, g);
        prev_bar += y_bar;
      }
      x_bar = std::move(prev_bar);
    }
    grads[b] = ResNetField::flatten(g);
  });

  LossAndGradient out;
  out.gradient = Vec::Zero(field.parameter_count());
  for (std::size_t b = 0; b < B; ++b) {
    out.loss += results[b].loss;
    out.mean_l += results[b].state.l;
    out.mean_r += results[b].state.r;
    out.mean_log_q += results[b].log_q;
    out.gradient += grads[b];
  }
  const double inv = 1.0 / static_cast<double>(B);
  out.loss *= inv;
  out.mean_l *= inv;
  out.mean_r *= inv;
  out.mean_log_q *= inv;
  out.gradient *= inv;
  if (!std::isfinite(out.loss) || !out.gradient.allFinite())
    throw NumericError("loss_gradient: non-finite loss or gradient");
  return out;
}

inline Vec loss_gradient(const ResNetField& field, const std::vector<Vec>& batch,
                         const EndpointDensity& end, double lambda,
                         const IntegratorConfig& cfg = {}) {
  return loss_and_gradient(field, batch, end, lambda, cfg).gradient;
}

namespace detail {

class OptimizerState {
 public:
  OptimizerState(Optimizer kind, Eigen::Index n, double lr)
      : kind_(kind), lr_(lr), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

  Vec step(const Vec& params, const Vec& grad) {
    if (kind_ == Optimizer::Sgd) return params - lr_ * grad;
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++t_;
    m_ = b1 * m_ + (1.0 - b1) * grad;
    v_ = b2 * v_ + (1.0 - b2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(b1, t_);
    const double c2 = 1.0 - std::pow(b2, t_);
    return params - lr_ * ((m_ / c1).array() /
                           ((v_ / c2).array().sqrt() + eps)).matrix();
  }

 private:
  Optimizer kind_;
  double lr_;
  Vec m_, v_;
  int t_ = 0;
};

struct HoldoutEstimate {
  double kl = 0.0;
  double reg = 0.0;
};

// mean(log p(x) - log q(X) + l) and mean(r); p may be absent.
inline HoldoutEstimate holdout_estimate(const ResNetField& field,
                                        const std::vector<Vec>& points,
                                        const GridDensity* start,
                                        const EndpointDensity& end,
                                        const IntegratorConfig& cfg) {
  std::vector<double> kl(points.size()), reg(points.size());
  detail::parallel_for(points.size(), cfg.threads, [&](std::size_t i) {
    const auto s = integrate_augmented(field, points[i], cfg);
    const double lp = start ? std::log(start->eval_clamped(points[i])) : 0.0;
    kl[i] = lp - end.log_value(s.x) + s.l;
    reg[i] = s.r;
  });
  HoldoutEstimate e;
  for (std::size_t i = 0; i < points.size(); ++i) {
    e.kl += kl[i];
    e.reg += reg[i];
  }
  e.kl /= static_cast<double>(points.size());
  e.reg /= static_cast<double>(points.size());
  return e;
}

// Shared loop. `draw` fills a minibatch; `start` is the density of the
// flow's starting points when known.
template <class Draw>
TrainReport train_loop(const GridDensity* start, const GridDensity& end_density,
                       const ResNetField& init, const TrainConfig& cfg,
                       std::mt19937_64& rng, Draw&& draw,
                       const std::vector<Vec>& holdout) {
  cfg.validate();
  detail::require(init.dim() == end_density.dim(), "train: field/density dim mismatch");
  EndpointDensity end(end_density);
  IntegratorConfig icfg = cfg.integrator;
  icfg.threads = cfg.threads;

  TrainReport rep;
  rep.field = init;
  Vec params = init.parameters();
  OptimizerState opt(cfg.optimizer, params.size(), cfg.learning_rate);
  ResNetField work = init;
  const auto t0 = std::chrono::steady_clock::now();

  for (int it = 0; it < cfg.max_iters; ++it) {
    const std::vector<Vec> batch = draw(rng);
    LossAndGradient lg;
    try {
      work.set_parameters(params);
      lg = loss_and_gradient(work, batch, end, cfg.lambda, icfg);
    } catch (const NumericError& e) {
      rep.diverged = true;
      rep.divergence_message =
          std::string(e.what()) + " at iteration " + std::to_string(it);
      break;
    }
    TrainRecord rec;
    rec.iter = it;
    rec.erm_loss = lg.loss;
    double lp = 0.0;
    if (start) {
      for (const auto& x : batch) lp += std::log(start->eval_clamped(x));
      lp /= static_cast<double>(batch.size());
    }
    rec.kl_estimate = lp - lg.mean_log_q + lg.mean_l;
    rec.reg_estimate = lg.mean_r;
    if (cfg.wallclock)
      rec.wallclock_ms = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - t0)
                             .count();
    rep.history.push_back(rec);
    rep.field.set_parameters(params);  // last state with a finite loss
    const Vec next = opt.step(params, lg.gradient);
    if (!next.allFinite()) {
      rep.diverged = true;
      rep.divergence_message =
          "non-finite weights after iteration " + std::to_string(it);
      break;
    }
    params = next;
  }
  if (!rep.diverged) rep.field.set_parameters(params);

  try {
    const auto est = holdout_estimate(rep.field, holdout, start, end, icfg);
    rep.final_kl_estimate = est.kl;
    rep.final_reg_estimate = est.reg;
  } catch (const NumericError& e) {
    rep.final_kl_estimate = std::numeric_limits<double>::quiet_NaN();
    rep.final_reg_estimate = std::numeric_limits<double>::quiet_NaN();
    if (!rep.diverged) {
      rep.diverged = true;
      rep.divergence_message = std::string("held-out evaluation: ") + e.what();
    }
  }
  rep.outside_evaluations = end.outside_count();
  return rep;
}

}  // namespace detail

/// Fresh samples from `source` each iteration are flowed towards
/// `target`, whose normalization constant does not matter.
inline TrainReport train(const GridDensity& source, const GridDensity& target,
                         const ResNetField& init, const TrainConfig& cfg) {
  detail::require(cfg.direction == Direction::SourceToTarget,
                  "train: density targets require direction SourceToTarget");
  detail::require(source.dim() == target.dim(), "train: source/target dim mismatch");
  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 hold_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const auto holdout = source.sample(hold_rng, static_cast<std::size_t>(cfg.holdout_samples));
  auto draw = [&](std::mt19937_64& r) {
    return source.sample(r, static_cast<std::size_t>(cfg.batch_size));
  };
  return detail::train_loop(&source, target, init, cfg, rng, draw, holdout);
}

/// Data samples are flowed to the known `source` density. Minibatches
/// are drawn with replacement from `samples`; `holdout` (if empty, the last
/// fifth of `samples`) is kept out of training.
inline TrainReport train(const GridDensity& source, const std::vector<Vec>& samples,
                         const ResNetField& init, const TrainConfig& cfg,
                         std::vector<Vec> holdout = {}) {
  detail::require(cfg.direction == Direction::SamplesToSource,
                  "train: sample data requires direction SamplesToSource");
  detail::require(!samples.empty(), "train: empty sample set");
  for (const auto& s : samples)
    detail::require(s.size() == source.dim(), "train: sample dim mismatch");
  std::vector<Vec> data = samples;
  if (holdout.empty()) {
    const std::size_t n_hold = samples.size() >= 10 ? samples.size() / 5 : 0;
    holdout.assign(data.end() - static_cast<std::ptrdiff_t>(n_hold), data.end());
    data.resize(data.size() - n_hold);
    if (holdout.empty()) holdout = data;
  }
  std::mt19937_64 rng(cfg.seed);
  auto draw = [&](std::mt19937_64& r) {
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::vector<Vec> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int i = 0; i < cfg.batch_size; ++i) batch.push_back(data[pick(r)]);
    return batch;
  };
  return detail::train_loop(nullptr, source, init, cfg, rng, draw, holdout);
}

/// Midpoint nodes of [0,1]^d with n per axis.
inline std::vector<Vec> midpoint_nodes(int dim, int n) {
  detail::require(dim >= 1 && n >= 1, "midpoint_nodes: bad shape");
  std::size_t total = 1;
  for (int k = 0; k < dim; ++k) total *= static_cast<std::size_t>(n);
  std::vector<Vec> out;
  out.reserve(total);
  for (std::size_t idx = 0; idx < total; ++idx) {
    Vec x(dim);
    std::size_t r = idx;
    for (int k = dim - 1; k >= 0; --k) {
      x[k] = (static_cast<double>(r % n) + 0.5) / n;
      r /= n;
    }
    out.push_back(std::move(x));
  }
  return out;
}

/// E_source[ int_0^1 |dX/dt|^2 dt ], the time integral taken with the RK4
/// weights of each step and the expectation by midpoint quadrature with
/// `nodes_per_axis` nodes per axis (0 picks about 4096 nodes in total).
template <VelocityField F>
double kinetic_energy(const F& field, const GridDensity& source,
                      const IntegratorConfig& cfg = {}, int nodes_per_axis = 0) {
  cfg.validate();
  detail::require(field.dim() == source.dim(), "kinetic_energy: dim mismatch");
  int n = nodes_per_axis;
  if (n <= 0)
    n = std::max(2, static_cast<int>(std::pow(4096.0, 1.0 / source.dim())));
  const auto nodes = midpoint_nodes(source.dim(), n);
  const double h = cfg.dt();
  std::vector<double> energy(nodes.size()), weight(nodes.size());
  detail::parallel_for(nodes.size(), cfg.threads, [&](std::size_t i) {
    Vec y = nodes[i];
    double e = 0.0;
    for (int s = 0; s < cfg.steps; ++s) {
      const double t = s * h;
      detail::with_context(nodes[i], t, [&] {
        const Vec k1 = field.value(y, t);
        const Vec k2 = field.value(y + 0.5 * h * k1, t + 0.5 * h);
        const Vec k3 = field.value(y + 0.5 * h * k2, t + 0.5 * h);
        const Vec k4 = field.value(y + h * k3, t + h);
        e += (h / 6.0) * (k1.squaredNorm() + 2.0 * k2.squaredNorm() +
                          2.0 * k3.squaredNorm() + k4.squaredNorm());
        y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        return 0;
      });
    }
    energy[i] = e;
    weight[i] = source.eval(nodes[i]);
  });
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    num += weight[i] * energy[i];
    den += weight[i];
  }
  return num / den;
}

/// Largest per-trajectory variance of the velocity f(X(x,t_n), t_n) over
/// the RK4 knots; zero for fields whose trajectories are straight lines
/// travelled at constant speed.
template <VelocityField F>
double max_velocity_variance(const F& field, const std::vector<Vec>& points,
                             const IntegratorConfig& cfg = {}) {
  cfg.validate();
  std::vector<double> var(points.size());
  detail::parallel_for(points.size(), cfg.threads, [&](std::size_t i) {
    const double h = cfg.dt();
    Vec y = points[i];
    std::vector<Vec> vel;
    vel.reserve(cfg.steps + 1);
    for (int s = 0; s <= cfg.steps; ++s) {
      vel.push_back(field.value(y, s * h));
      if (s < cfg.steps) y = detail::rk4_step(field, y, s * h, h);
    }
    Vec mean = Vec::Zero(field.dim());
    for (const auto& v : vel) mean += v;
    mean /= static_cast<double>(vel.size());
    double acc = 0.0;
    for (const auto& v : vel) acc += (v - mean).squaredNorm();
    var[i] = acc / static_cast<double>(vel.size());
  });
  return var.empty() ? 0.0 : *std::max_element(var.begin(), var.end());
}

}  // namespace flowforge

#endif  // FLOWFORGE_OBJECTIVE_HPP
