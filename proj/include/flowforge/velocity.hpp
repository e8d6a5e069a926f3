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

#ifndef FLOWFORGE_VELOCITY_HPP
#define FLOWFORGE_VELOCITY_HPP

#include "flowforge/transport.hpp"

#include <concepts>
#include <functional>
#include <random>
#include <string>

namespace flowforge {

/// A time-dependent velocity field f : R^d x [0,1] -> R^d with access to its
/// space-time Jacobian [grad_y f | d_t f], a d x (d+1) matrix.
template <class F>
concept VelocityField = requires(const F& f, const Vec& y, double t) {
  { f.dim() } -> std::convertible_to<int>;
  { f.value(y, t) } -> std::convertible_to<Vec>;
  { f.jacobian(y, t) } -> std::convertible_to<Mat>;
};

struct ZeroField {
  int d = 1;
  int dim() const { return d; }
  Vec value(const Vec&, double) const { return Vec::Zero(d); }
  Mat jacobian(const Vec&, double) const { return Mat::Zero(d, d + 1); }
};

struct ConstantField {
  Vec c;
  int dim() const { return static_cast<int>(c.size()); }
  Vec value(const Vec&, double) const { return c; }
  Mat jacobian(const Vec&, double) const { return Mat::Zero(dim(), dim() + 1); }
};

/// Time reparametrization s(t) of the displacement interpolation, with
/// s(0)=0, s(1)=1 and s' > 0 on (0,1].
struct TimeProfile {
  std::string name;
  std::function<double(double)> s;
  std::function<double(double)> ds;
  std::function<double(double)> dds;

  static TimeProfile linear() {
    return {"linear", [](double t) { return t; }, [](double) { return 1.0; },
            [](double) { return 0.0; }};
  }
  static TimeProfile quadratic() {
    return {"quadratic", [](double t) { return t * t; },
            [](double t) { return 2.0 * t; }, [](double) { return 2.0; }};
  }
  static TimeProfile cubic() {
    return {"cubic", [](double t) { return t * t * t; },
            [](double t) { return 3.0 * t * t; },
            [](double t) { return 6.0 * t; }};
  }
  static TimeProfile sine() {
    return {"sine", [](double t) { return std::sin(0.5 * kPi * t); },
            [](double t) { return 0.5 * kPi * std::cos(0.5 * kPi * t); },
            [](double t) {
              return -0.25 * kPi * kPi * std::sin(0.5 * kPi * t);
            }};
  }
};

/// The velocity field whose flow moves every x along the straight line to
/// T(x): f(T_t(x), t) = T(x) - x. With a non-linear time profile s the
/// particle travels the same line at speed s'(t), i.e.
/// f(T_{s(t)}(x), t) = s'(t) (T(x) - x).
class StraightLineField {
 public:
  explicit StraightLineField(TriangularMap map,
                             TimeProfile profile = TimeProfile::linear(),
                             double inversion_tolerance = 1e-10,
                             double fd_step = 1e-5)
      : map_(std::move(map)),
        profile_(std::move(profile)),
        tol_(inversion_tolerance),
        step_(fd_step) {}

  int dim() const { return map_.dim(); }
  const TriangularMap& map() const { return map_; }
  const TimeProfile& profile() const { return profile_; }
  double inversion_tolerance() const { return tol_; }

  /// Preimage x with T_{s(t)}(x) = y.
  Vec preimage(const Vec& y, double t) const {
    check(y, t, "straightline_eval");
    return map_.inverse_displacement(clamp_unit(y), profile_.s(t), tol_);
  }

  Vec value(const Vec& y, double t) const {
    const Vec x = preimage(y, t);
    return profile_.ds(t) * (map_.evaluate(x) - x);
  }

  /// Finite-difference space-time Jacobian. Spatial derivatives are central
  /// and need y at least one step inside the cube; the time derivative falls
  /// back to a second-order one-sided stencil near t = 0 and t = 1.
  Mat jacobian(const Vec& y, double t) const {
    check(y, t, "straightline_space_jacobian");
    for (int k = 0; k < dim(); ++k)
      if (y[k] < step_ || y[k] > 1.0 - step_)
        throw DomainError(
            "straightline_space_jacobian: point too close to the boundary: " +
            detail::format_point(y));
    Mat jac(dim(), dim() + 1);
    for (int j = 0; j < dim(); ++j) {
      Vec yp = y, ym = y;
      yp[j] += step_;
      ym[j] -= step_;
      jac.col(j) = (value(yp, t) - value(ym, t)) / (2.0 * step_);
    }
    if (t >= step_ && t <= 1.0 - step_) {
      jac.col(dim()) = (value(y, t + step_) - value(y, t - step_)) / (2.0 * step_);
    } else {
      const double dir = t < step_ ? 1.0 : -1.0;
      const Vec f0 = value(y, t);
      const Vec f1 = value(y, t + dir * step_);
      const Vec f2 = value(y, t + 2.0 * dir * step_);
      jac.col(dim()) = dir * (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * step_);
    }
    return jac;
  }

  /// grad_y f . f + d_t f, the Lagrangian acceleration.
  Vec acceleration(const Vec& y, double t) const {
    const Mat jac = jacobian(y, t);
    return jac.leftCols(dim()) * value(y, t) + jac.col(dim());
  }

 private:
  static Vec clamp_unit(const Vec& y) { return y.cwiseMax(0.0).cwiseMin(1.0); }

  void check(const Vec& y, double t, const char* what) const {
    detail::require(y.size() == dim(), std::string(what) + ": bad dim");
    // Integrators may overshoot a face by rounding; anything more is an error.
    constexpr double slack = 1e-12;
    for (int k = 0; k < dim(); ++k)
      if (!(y[k] >= -slack && y[k] <= 1.0 + slack))
        throw DomainError(std::string(what) + ": point outside the cube: " +
                          detail::format_point(y));
    if (!(t >= -slack && t <= 1.0 + slack))
      throw DomainError(std::string(what) + ": t outside [0,1]");
  }

  TriangularMap map_;
  TimeProfile profile_;
  double tol_;
  double step_;
};

enum class Activation { Tanh, Relu, Identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
  }
  return "tanh";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "identity" || s == "linear") return Activation::Identity;
  throw ArgumentError("unknown activation '" + s + "'");
}

/// Gradients of a scalar objective with respect to every ResNet weight, laid
/// out like ResNetField's members.
struct ResNetGradient {
  std::vector<Mat> K;
  std::vector<Vec> b;
  Mat K_out;
  Vec b_out;
};

/// Residual network velocity field on the space-time input s = (x, t):
///
///   u_0 = sigma(K_0 s + b_0)
///   u_i = u_{i-1} + h sigma(K_i u_{i-1} + b_i),   i = 1..M
///   f   = K_out u_M + b_out
///
/// The input Jacobian is propagated alongside the forward pass with
/// J_0 = diag(sigma'(z_0)) K_0 and J_i = J_{i-1} + h diag(sigma'(z_i)) K_i J_{i-1}.
///
/// With `cube_mask` set, component j is multiplied by x_j (1 - x_j), which
/// makes the field tangent to the faces of [0,1]^d so flows never leave it.
class ResNetField {
 public:
  ResNetField() = default;

  /// Zero weights of the given shape.
  ResNetField(int dim, int width, int layers, double step = 0.0,
              Activation act = Activation::Tanh, bool cube_mask = false)
      : dim_(dim), width_(width), act_(act), mask_(cube_mask) {
    detail::require(dim >= 1 && width >= 1 && layers >= 0,
                    "ResNetField: need dim >= 1, width >= 1, layers >= 0");
    step_ = step > 0.0 ? step : 1.0 / std::max(layers, 1);
    K.push_back(Mat::Zero(width, dim + 1));
    b.push_back(Vec::Zero(width));
    for (int i = 1; i <= layers; ++i) {
      K.push_back(Mat::Zero(width, width));
      b.push_back(Vec::Zero(width));
    }
    K_out = Mat::Zero(dim, width);
    b_out = Vec::Zero(dim);
  }

  /// Weights drawn uniformly from [-scale/sqrt(W), scale/sqrt(W)].
  template <class Rng>
  static ResNetField random(int dim, int width, int layers, Rng& rng,
                            double scale = 0.1, double step = 0.0,
                            Activation act = Activation::Tanh,
                            bool cube_mask = false) {
    ResNetField f(dim, width, layers, step, act, cube_mask);
    const double a = scale / std::sqrt(static_cast<double>(width));
    std::uniform_real_distribution<double> u(-a, a);
    Vec p = f.parameters();
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = u(rng);
    f.set_parameters(p);
    return f;
  }

  int dim() const { return dim_; }
  int width() const { return width_; }
  int layers() const { return static_cast<int>(K.size()) - 1; }
  double step() const { return step_; }
  Activation activation() const { return act_; }
  bool cube_mask() const { return mask_; }

  Vec value(const Vec& y, double t) const {
    Vec s(dim_ + 1);
    s << y, t;
    Vec u = sigma(K[0] * s + b[0]);
    for (std::size_t i = 1; i < K.size(); ++i)
      u += step_ * sigma(K[i] * u + b[i]);
    Vec f = K_out * u + b_out;
    if (mask_)
      for (int j = 0; j < dim_; ++j) f[j] *= y[j] * (1.0 - y[j]);
    return f;
  }

  /// Exact d x (d+1) Jacobian with respect to (y, t).
  Mat jacobian(const Vec& y, double t) const { return record(y, t).jf; }

  /// Value and Jacobian in one pass.
  std::pair<Vec, Mat> value_and_jacobian(const Vec& y, double t) const {
    Tape tape = record(y, t);
    return {std::move(tape.f), std::move(tape.jf)};
  }

  /// Intermediate values of one evaluation, reused by the reverse pass.
  struct Tape {
    Vec s;
    std::vector<Vec> z;    // pre-activations
    std::vector<Vec> u;    // layer outputs
    std::vector<Vec> ds;   // sigma'(z)
    std::vector<Vec> dds;  // sigma''(z)
    std::vector<Mat> J;    // d u_i / d s
    std::vector<Mat> KJ;   // K_i J_{i-1}, i >= 1
    Vec g;                 // unmasked output
    Mat jg;                // unmasked output Jacobian
    Vec f;
    Mat jf;
  };

  Tape record(const Vec& y, double t) const {
    Tape tape;
    forward(y, t, tape);
    return tape;
  }

  /// Reverse-mode pass: given cotangents for the output f (d) and for its
  /// space-time Jacobian (d x (d+1)), accumulates weight gradients into
  /// `grad` and returns the cotangent of the input (y, t).
  Vec backward(const Vec& y, double t, const Vec& f_bar, const Mat& jf_bar,
               ResNetGradient& grad) const {
    return backward(record(y, t), f_bar, jf_bar, grad);
  }

  ResNetGradient zero_gradient() const {
    ResNetGradient g;
    for (const auto& k : K) g.K.push_back(Mat::Zero(k.rows(), k.cols()));
    for (const auto& v : b) g.b.push_back(Vec::Zero(v.size()));
    g.K_out = Mat::Zero(K_out.rows(), K_out.cols());
    g.b_out = Vec::Zero(b_out.size());
    return g;
  }

  Eigen::Index parameter_count() const {
    Eigen::Index n = K_out.size() + b_out.size();
    for (std::size_t i = 0; i < K.size(); ++i) n += K[i].size() + b[i].size();
    return n;
  }

  /// Flattened weights in the order K_0, b_0, ..., K_M, b_M, K_out, b_out
  /// (matrices column-major).
  Vec parameters() const {
    Vec p(parameter_count());
    Eigen::Index o = 0;
    auto put = [&](const auto& m) {
      p.segment(o, m.size()) = Eigen::Map<const Vec>(m.data(), m.size());
      o += m.size();
    };
    for (std::size_t i = 0; i < K.size(); ++i) {
      put(K[i]);
      put(b[i]);
    }
    put(K_out);
    put(b_out);
    return p;
  }

  void set_parameters(const Vec& p) {
    detail::require(p.size() == parameter_count(),
                    "set_parameters: wrong parameter count");
    Eigen::Index o = 0;
    auto get = [&](auto& m) {
      Eigen::Map<Vec>(m.data(), m.size()) = p.segment(o, m.size());
      o += m.size();
    };
    for (std::size_t i = 0; i < K.size(); ++i) {
      get(K[i]);
      get(b[i]);
    }
    get(K_out);
    get(b_out);
  }

  static Vec flatten(const ResNetGradient& g) {
    Eigen::Index n = g.K_out.size() + g.b_out.size();
    for (std::size_t i = 0; i < g.K.size(); ++i) n += g.K[i].size() + g.b[i].size();
    Vec p(n);
    Eigen::Index o = 0;
    auto put = [&](const auto& m) {
      p.segment(o, m.size()) = Eigen::Map<const Vec>(m.data(), m.size());
      o += m.size();
    };
    for (std::size_t i = 0; i < g.K.size(); ++i) {
      put(g.K[i]);
      put(g.b[i]);
    }
    put(g.K_out);
    put(g.b_out);
    return p;
  }

  std::vector<Mat> K;
  std::vector<Vec> b;
  Mat K_out;
  Vec b_out;

 private:
  Vec sigma(const Vec& z) const {
    switch (act_) {
      case Activation::Tanh: return z.array().tanh().matrix();
      case Activation::Relu: return z.cwiseMax(0.0);
      case Activation::Identity: return z;
    }
    return z;
  }

  // sigma'(z) and sigma''(z); sigma'(0) := 0 for relu.
  void derivatives(const Vec& z, Vec& ds, Vec& dds) const {
    switch (act_) {
      case Activation::Tanh: {
        const Eigen::ArrayXd th = z.array().tanh();
        ds = (1.0 - th * th).matrix();
        dds = (-2.0 * th * ds.array()).matrix();
        return;
      }
      case Activation::Relu:
        ds = (z.array() > 0.0).cast<double>().matrix();
        dds = Vec::Zero(z.size());
        return;
      case Activation::Identity:
        ds = Vec::Ones(z.size());
        dds = Vec::Zero(z.size());
        return;
    }
  }

  void forward(const Vec& y, double t, Tape& tp) const {
    detail::require(y.size() == dim_, "ResNetField: bad input dim");
    tp.s.resize(dim_ + 1);
    tp.s << y, t;
    const std::size_t L = K.size();
    tp.z.resize(L);
    tp.u.resize(L);
    tp.ds.resize(L);
    tp.dds.resize(L);
    tp.J.resize(L);
    tp.KJ.resize(L);
    tp.z[0].noalias() = K[0] * tp.s;
    tp.z[0] += b[0];
    tp.u[0] = sigma(tp.z[0]);
    derivatives(tp.z[0], tp.ds[0], tp.dds[0]);
    tp.J[0].noalias() = tp.ds[0].asDiagonal() * K[0];
    for (std::size_t i = 1; i < L; ++i) {
      tp.z[i].noalias() = K[i] * tp.u[i - 1];
      tp.z[i] += b[i];
      tp.u[i] = tp.u[i - 1] + step_ * sigma(tp.z[i]);
      derivatives(tp.z[i], tp.ds[i], tp.dds[i]);
      tp.KJ[i].noalias() = K[i] * tp.J[i - 1];
      tp.J[i] = tp.J[i - 1];
      tp.J[i].noalias() += step_ * (tp.ds[i].asDiagonal() * tp.KJ[i]);
    }
    tp.g = K_out * tp.u[L - 1] + b_out;
    tp.jg = K_out * tp.J[L - 1];
    tp.f = tp.g;
    tp.jf = tp.jg;
    if (mask_) {
      for (int j = 0; j < dim_; ++j) {
        const double m = y[j] * (1.0 - y[j]);
        const double dm = 1.0 - 2.0 * y[j];
        tp.f[j] = m * tp.g[j];
        tp.jf.row(j) = m * tp.jg.row(j);
        tp.jf(j, j) += dm * tp.g[j];
      }
    }
  }

 public:
  Vec backward(const Tape& tp, const Vec& f_bar_in, const Mat& jf_bar_in,
               ResNetGradient& grad) const {
    Vec s_bar = Vec::Zero(dim_ + 1);
    Vec g_bar = f_bar_in;
    Mat jg_bar = jf_bar_in;
    if (mask_) {
      for (int j = 0; j < dim_; ++j) {
        const double yj = tp.s[j];
        const double m = yj * (1.0 - yj);
        const double dm = 1.0 - 2.0 * yj;
        s_bar[j] += dm * (f_bar_in[j] * tp.g[j] + jf_bar_in.row(j).dot(tp.jg.row(j))) -
                    2.0 * jf_bar_in(j, j) * tp.g[j];
        g_bar[j] = m * f_bar_in[j] + dm * jf_bar_in(j, j);
        jg_bar.row(j) = m * jf_bar_in.row(j);
      }
    }
    const std::size_t L = K.size();
    grad.K_out += g_bar * tp.u[L - 1].transpose() + jg_bar * tp.J[L - 1].transpose();
    grad.b_out += g_bar;
    Vec u_bar = K_out.transpose() * g_bar;
    Mat j_bar = K_out.transpose() * jg_bar;
    for (std::size_t i = L - 1; i >= 1; --i) {
      const Vec& ds = tp.ds[i];
      const Mat dj = ds.asDiagonal() * j_bar;  // diag(sigma') * J_bar_i
      // J_i = J_{i-1} + h diag(sigma'(z_i)) K_i J_{i-1}
      const Vec d_bar =
          step_ * (j_bar.array() * tp.KJ[i].array()).rowwise().sum().matrix();
      grad.K[i] += step_ * dj * tp.J[i - 1].transpose();
      Mat j_prev_bar = j_bar + step_ * (K[i].transpose() * dj);
      // u_i = u_{i-1} + h sigma(z_i)
      const Vec z_bar = step_ * ds.cwiseProduct(u_bar) +
                        tp.dds[i].cwiseProduct(d_bar);
      grad.K[i] += z_bar * tp.u[i - 1].transpose();
      grad.b[i] += z_bar;
      u_bar += K[i].transpose() * z_bar;
      j_bar = std::move(j_prev_bar);
    }
    // J_0 = diag(sigma'(z_0)) K_0, u_0 = sigma(z_0)
    const Vec& ds0 = tp.ds[0];
    grad.K[0] += ds0.asDiagonal() * j_bar;
    const Vec d0_bar = (j_bar.array() * K[0].array()).rowwise().sum().matrix();
    const Vec z0_bar = ds0.cwiseProduct(u_bar) + tp.dds[0].cwiseProduct(d0_bar);
    grad.K[0] += z0_bar * tp.s.transpose();
    grad.b[0] += z0_bar;
    s_bar += K[0].transpose() * z0_bar;
    return s_bar;
  }

 private:
  int dim_ = 1;
  int width_ = 1;
  double step_ = 1.0;
  Activation act_ = Activation::Tanh;
  bool mask_ = false;
};

/// Smooth perturbation eps * bump(y) * b(y, t) with bump = prod_k sin(pi y_k)
/// vanishing on the faces of the cube and b_i = cos(w_i . y + nu_i t + phi_i)
/// / sqrt(d), so that |perturbation| <= eps everywhere.
struct BumpPerturbation {
  double eps = 0.0;
  Mat freq;     // d x d
  Vec tfreq;    // d
  Vec phase;    // d

  template <class Rng>
  static BumpPerturbation random(int dim, double eps, Rng& rng) {
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    std::uniform_real_distribution<double> ph(0.0, 2.0 * kPi);
    BumpPerturbation p;
    p.eps = eps;
    p.freq = Mat(dim, dim);
    p.tfreq = Vec(dim);
    p.phase = Vec(dim);
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) p.freq(i, j) = u(rng);
      p.tfreq[i] = u(rng);
      p.phase[i] = ph(rng);
    }
    return p;
  }

  int dim() const { return static_cast<int>(phase.size()); }

  Vec value(const Vec& y, double t) const {
    const int d = dim();
    double bump = 1.0;
    for (int k = 0; k < d; ++k) bump *= std::sin(kPi * y[k]);
    Vec out(d);
    const double norm = 1.0 / std::sqrt(static_cast<double>(d));
    for (int i = 0; i < d; ++i)
      out[i] = eps * bump * norm *
               std::cos(freq.row(i).dot(y) + tfreq[i] * t + phase[i]);
    return out;
  }

  Mat jacobian(const Vec& y, double t) const {
    const int d = dim();
    Vec sines(d), dbump(d);
    double bump = 1.0;
    for (int k = 0; k < d; ++k) {
      sines[k] = std::sin(kPi * y[k]);
      bump *= sines[k];
    }
    for (int k = 0; k < d; ++k) {
      double p = kPi * std::cos(kPi * y[k]);
      for (int j = 0; j < d; ++j)
        if (j != k) p *= sines[j];
      dbump[k] = p;
    }
    const double norm = 1.0 / std::sqrt(static_cast<double>(d));
    Mat jac(d, d + 1);
    for (int i = 0; i < d; ++i) {
      const double arg = freq.row(i).dot(y) + tfreq[i] * t + phase[i];
      const double c = std::cos(arg), s = std::sin(arg);
      for (int k = 0; k < d; ++k)
        jac(i, k) = eps * norm * (dbump[k] * c - bump * s * freq(i, k));
      jac(i, d) = -eps * norm * bump * s * tfreq[i];
    }
    return jac;
  }
};

/// g = f + perturbation.
template <VelocityField Base>
class PerturbedField {
 public:
  PerturbedField(const Base& base, BumpPerturbation p)
      : base_(&base), p_(std::move(p)) {}

  int dim() const { return base_->dim(); }
  const BumpPerturbation& perturbation() const { return p_; }
  Vec value(const Vec& y, double t) const {
    return base_->value(y, t) + p_.value(y, t);
  }
  Mat jacobian(const Vec& y, double t) const {
    return base_->jacobian(y, t) + p_.jacobian(y, t);
  }

 private:
  const Base* base_;
  BumpPerturbation p_;
};

}  // namespace flowforge

#endif  // FLOWFORGE_VELOCITY_HPP
