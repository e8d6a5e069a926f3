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

#include "flowforge/flow.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

namespace ff = flowforge;
using ff::Mat;
using ff::Vec;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
double sine(double x) { return oracle::sine_pdf(x); }

ff::StraightLineField sine_field(ff::TimeProfile p = ff::TimeProfile::linear()) {
  return ff::StraightLineField(
      ff::TriangularMap(ff::GridDensity::sine1d(257), ff::GridDensity::uniform(1, 257)),
      std::move(p));
}

ff::StraightLineField product_field() {
  return ff::StraightLineField(ff::TriangularMap(ff::GridDensity::product({sine, sine}, 65),
                                                 ff::GridDensity::uniform(2, 65)));
}

const ff::IntegratorConfig kCfg{100};

}  // namespace

TEST(IntegratorConfig, RequiresFourSteps) {
  EXPECT_THROW(ff::integrate_flow(ff::ZeroField{1}, v1(0.5), ff::IntegratorConfig{3}),
               ff::ArgumentError);
}

TEST(IntegrateFlow, ZeroFieldIsConstant) {
  EXPECT_EQ(ff::integrate_flow(ff::ZeroField{1}, v1(0.3), 0.7, kCfg)[0], 0.3);
}

TEST(IntegrateFlow, ConstantFieldIsLinear) {
  Vec c(2);
  c << 0.2, -0.1;
  Vec x0(2);
  x0 << 0.5, 0.5;
  for (double t : {0.0, 0.33, 1.0})
    EXPECT_LT((ff::integrate_flow(ff::ConstantField{c}, x0, t, kCfg) - (x0 + t * c)).norm(), 1e-14);
}

TEST(IntegrateFlow, StraightLineReproducesTheMap) {
  const auto f = sine_field();
  EXPECT_NEAR(ff::integrate_flow(f, v1(0.5), kCfg)[0], 0.659155, 1e-4);
  EXPECT_NEAR(ff::integrate_flow(f, v1(0.5), kCfg)[0], f.map()(v1(0.5))[0], 1e-8);
}

TEST(IntegrateFlow, StraightLineFollowsTheInterpolationAtEveryKnot) {
  const auto f = product_field();
  const ff::IntegratorConfig cfg{20};
  for (const auto& x : ff::halton_points(2, 10)) {
    for (const auto& knot : ff::trajectory(f, x, cfg))
      EXPECT_LT((knot.state.x - f.map().displacement(x, knot.t)).norm(), 5e-5);
  }
}

TEST(IntegrateFlow, ErrorsCarryTrajectoryContext) {
  const auto f = sine_field();
  try {
    ff::integrate_flow(f, v1(1.5), kCfg);
    FAIL() << "expected a domain error";
  } catch (const ff::DomainError& e) {
    EXPECT_NE(std::string(e.what()).find("trajectory from"), std::string::npos);
  }
}

TEST(IntegrateAugmented, ZeroField) {
  const auto s = ff::integrate_augmented(ff::ZeroField{2}, Vec::Constant(2, 0.4), kCfg);
  EXPECT_EQ(s.x, Vec::Constant(2, 0.4));
  EXPECT_EQ(s.l, 0.0);
  EXPECT_EQ(s.r, 0.0);
}

TEST(IntegrateAugmented, StraightLineLogDet) {
  const auto s = ff::integrate_augmented(sine_field(), v1(0.25), kCfg);
  EXPECT_NEAR(s.l, -std::log(1.5), 1e-4);
  EXPECT_NEAR(s.log_det(), std::log(1.5), 1e-4);
  EXPECT_LE(s.r, 1e-6);
  EXPECT_GE(s.r, 0.0);
}

TEST(IntegrateAugmented, ReparametrizedFieldHasPositiveRegularizer) {
  const auto f = sine_field(ff::TimeProfile::quadratic());
  const auto s = ff::integrate_augmented(f, v1(0.25), kCfg);
  EXPECT_NEAR(s.x[0], f.map()(v1(0.25))[0], 1e-6);
  // r = int_0^1 |s''(t) (T(x) - x)|^2 dt = 4 (T(x) - x)^2.
  const double d = oracle::sine_cdf(0.25) - 0.25;
  const double r = oracle::integrate([&](double) { return 4.0 * d * d; });
  EXPECT_GT(s.r, 0.0);
  EXPECT_NEAR(s.r, r, 1e-3 * r);
}

TEST(IntegrateAugmented, LogDetMatchesFiniteDifferenceDeterminant) {
  std::mt19937_64 rng(9);
  const auto f = ff::ResNetField::random(2, 8, 3, rng, 3.0);
  for (const auto& x : ff::halton_points(2, 10)) {
    const auto s = ff::integrate_augmented(f, x, kCfg);
    const Mat J =
        oracle::fd_jacobian([&](const Vec& y) { return ff::integrate_flow(f, y, kCfg); }, x, 1e-5);
    EXPECT_NEAR(std::exp(-s.l), J.determinant(), 1e-3 * std::abs(J.determinant()));
  }
}

TEST(IntegrateAugmented, PushforwardRelationAlongStraightLines) {
  const auto f = product_field();
  const ff::IntegratorConfig cfg{20};
  for (const auto& u : ff::halton_points(2, 10)) {
    const Vec x = (0.05 + 0.9 * u.array()).matrix();
    const auto s = ff::integrate_augmented(f, x, cfg);
    const double lhs = std::exp(-s.l) * f.map().target().eval(s.x);
    const double rhs = f.map().source().eval(x);
    EXPECT_NEAR(lhs, rhs, 1e-2 * rhs);
  }
}

TEST(IntegrateAugmented, RegularizerIsNondecreasing) {
  std::mt19937_64 rng(10);
  const auto f = ff::ResNetField::random(2, 8, 2, rng, 2.0);
  const auto traj = ff::trajectory(f, Vec::Constant(2, 0.3), ff::IntegratorConfig{16});
  ASSERT_EQ(traj.size(), 17u);
  EXPECT_EQ(traj.front().t, 0.0);
  EXPECT_NEAR(traj.back().t, 1.0, 1e-15);
  for (std::size_t i = 1; i < traj.size(); ++i) EXPECT_GE(traj[i].state.r, traj[i - 1].state.r);
}

TEST(IntegrateBackward, ZeroField) {
  EXPECT_EQ(ff::integrate_backward(ff::ZeroField{1}, v1(0.7), kCfg)[0], 0.7);
}

TEST(IntegrateBackward, StraightLineInvertsTheMap) {
  EXPECT_NEAR(ff::integrate_backward(sine_field(), v1(0.659155), kCfg)[0], 0.5, 1e-5);
}

TEST(IntegrateBackward, RoundTrip) {
  std::mt19937_64 rng(11);
  const auto net = ff::ResNetField::random(2, 8, 3, rng, 2.0);
  const auto line = product_field();
  std::uniform_real_distribution<double> U(0.0, 1.0);
  double worst_net = 0.0, worst_line = 0.0;
  for (int i = 0; i < 100; ++i) {
    Vec y(2);
    y << U(rng), U(rng);
    worst_net = std::max(
        worst_net, (ff::integrate_flow(net, ff::integrate_backward(net, y, kCfg), kCfg) - y).norm());
    if (i < 20) {
      const ff::IntegratorConfig c{20};
      worst_line = std::max(
          worst_line,
          (ff::integrate_flow(line, ff::integrate_backward(line, y, c), c) - y).norm());
    }
  }
  EXPECT_LE(worst_net, 1e-6);
  EXPECT_LE(worst_line, 1e-6);
}

TEST(IntegrateBackward, AugmentedBackwardRecoversForwardLogDet) {
  std::mt19937_64 rng(12);
  const auto f = ff::ResNetField::random(2, 6, 2, rng, 2.0);
  const Vec x = Vec::Constant(2, 0.35);
  const auto fwd = ff::integrate_augmented(f, x, kCfg);
  const auto bwd = ff::integrate_augmented_backward(f, fwd.x, kCfg);
  EXPECT_LT((bwd.x - x).norm(), 1e-8);
  EXPECT_NEAR(bwd.l, fwd.l, 1e-8);
  EXPECT_NEAR(bwd.r, fwd.r, 1e-6 * std::max(1.0, fwd.r));
}

TEST(BatchIntegration, IndependentOfThreadCount) {
  std::mt19937_64 rng(13);
  const auto f = ff::ResNetField::random(2, 8, 2, rng, 2.0);
  const auto pts = ff::halton_points(2, 37);
  const auto a = ff::integrate_augmented_batch(f, pts, ff::IntegratorConfig{20, 1});
  const auto b = ff::integrate_augmented_batch(f, pts, ff::IntegratorConfig{20, 4});
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_EQ(a[i].x, b[i].x);
    EXPECT_EQ(a[i].l, b[i].l);
  }
}
