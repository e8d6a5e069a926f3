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

#include "flowforge/density.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

namespace ff = flowforge;
using ff::Vec;

namespace {

Vec v1(double a) { return Vec::Constant(1, a); }
Vec v2(double a, double b) {
  Vec x(2);
  x << a, b;
  return x;
}

double sine(double x) { return oracle::sine_pdf(x); }

}  // namespace

TEST(GridDensity, RejectsBadShapes) {
  EXPECT_THROW(ff::GridDensity(0, 16, {}), ff::ArgumentError);
  EXPECT_THROW(ff::GridDensity(1, 4, std::vector<double>(4, 1.0)), ff::ArgumentError);
  EXPECT_THROW(ff::GridDensity(1, 16, std::vector<double>(15, 1.0)), ff::ArgumentError);
  std::vector<double> bad(16, 1.0);
  bad[3] = 0.0;
  EXPECT_THROW(ff::GridDensity(1, 16, bad), ff::ArgumentError);
  bad[3] = std::nan("");
  EXPECT_THROW(ff::GridDensity(1, 16, bad), ff::ArgumentError);
}

TEST(GridDensity, RenormalizesAndRecordsBounds) {
  const ff::GridDensity p(1, 9, std::vector<double>(9, 4.0));
  EXPECT_NEAR(p.integral(), 1.0, 1e-12);
  EXPECT_NEAR(p.normalization(), 4.0, 1e-12);
  EXPECT_NEAR(p.lower_bound(), 1.0, 1e-12);
  EXPECT_NEAR(p.upper_bound(), 1.0, 1e-12);

  const auto s = ff::GridDensity::sine1d(257);
  EXPECT_NEAR(s.integral(), 1.0, 1e-12);
  EXPECT_NEAR(s.lower_bound(), 0.5, 1e-12);
  EXPECT_NEAR(s.upper_bound(), 1.5, 1e-12);
  for (double v : s.values()) {
    EXPECT_GE(v, s.lower_bound());
    EXPECT_LE(v, s.upper_bound());
  }
}

TEST(GridDensityEval, UniformIsOne) {
  EXPECT_DOUBLE_EQ(ff::GridDensity::uniform(2, 16).eval(v2(0.3, 0.7)), 1.0);
}

TEST(GridDensityEval, SineAtNodes) {
  // 0.25 and 0.75 are grid nodes for m = 257.
  const auto s = ff::GridDensity::sine1d(257);
  EXPECT_NEAR(s.eval(v1(0.25)), 1.5, 1e-12);
  EXPECT_NEAR(s.eval(v1(0.75)), 0.5, 1e-12);
}

TEST(GridDensityEval, InterpolationErrorIsSecondOrder) {
  const auto s = ff::GridDensity::sine1d(257);
  double worst = 0.0;
  for (int i = 0; i <= 1000; ++i) {
    const double x = i / 1000.0;
    worst = std::max(worst, std::abs(s.eval(v1(x)) - sine(x)));
  }
  // |f''| h^2 / 8 with |f''| <= 2 pi^2.
  EXPECT_LT(worst, 2.0 * oracle::kPi * oracle::kPi / (8.0 * 256.0 * 256.0) + 1e-12);
}

TEST(GridDensityEval, OutsideCubeIsDomainError) {
  const auto s = ff::GridDensity::sine1d(64);
  EXPECT_THROW(s.eval(v1(-1e-9)), ff::DomainError);
  EXPECT_THROW(s.eval(v1(1.5)), ff::DomainError);
  EXPECT_NO_THROW(s.eval_clamped(v1(1.5)));
  EXPECT_DOUBLE_EQ(s.eval_clamped(v1(1.5)), s.eval(v1(1.0)));
}

TEST(Marginal, UniformConditionalIsOne) {
  const auto u = ff::GridDensity::uniform(2, 16);
  const auto f2 = ff::marginal(u, 2);
  for (double x : {0.0, 0.13, 0.5, 0.99, 1.0}) EXPECT_NEAR(f2(v2(0.4, x)), 1.0, 1e-12);
}

TEST(Marginal, ProductFactorizes) {
  const auto p = ff::GridDensity::product({sine, sine}, 257);
  const auto f2 = ff::marginal(p, 2);
  for (double x : {0.0, 0.125, 0.25, 0.5, 0.75, 1.0})
    EXPECT_NEAR(f2(v2(0.25, x)), sine(x), 1e-12) << x;
  // Off-node prefixes interpolate the same profile.
  for (double x : {0.1, 0.33, 0.9})
    EXPECT_NEAR(f2(v2(0.3141, x)), sine(x), 2e-4) << x;
}

TEST(Marginal, OneDimensionalIsTheDensity) {
  const auto s = ff::GridDensity::sine1d(64);
  const auto f1 = ff::marginal(s, 1);
  for (double x : {0.0, 0.21, 0.5, 0.77, 1.0}) EXPECT_NEAR(f1(v1(x)), s.eval(v1(x)), 1e-12);
}

TEST(Marginal, IntegratesToOneForEveryPrefix) {
  const auto p = ff::GridDensity::from_function(2, 33, [](const Vec& x) {
    return 1.0 + 0.4 * std::sin(3.0 * x[0] + 2.0 * x[1]) * std::cos(5.0 * x[1]);
  });
  const auto f2 = ff::marginal(p, 2);
  for (double a : {0.0, 0.17, 0.5, 0.93}) {
    const double mass = oracle::integrate([&](double x) { return f2(v2(a, x)); }, 0.0, 1.0, 1e-10);
    EXPECT_NEAR(mass, 1.0, 1e-5) << a;
  }
}

TEST(Marginal, AxisOutOfRange) {
  const auto u = ff::GridDensity::uniform(2, 16);
  EXPECT_THROW(ff::marginal(u, 0), ff::ArgumentError);
  EXPECT_THROW(ff::marginal(u, 3), ff::ArgumentError);
}

TEST(ConditionalCdf, UniformIsIdentity) {
  const auto u = ff::GridDensity::uniform(2, 16);
  EXPECT_NEAR(u.conditional_cdf(2, v2(0.6, 0.0), 0.37), 0.37, 1e-12);
  EXPECT_NEAR(u.conditional_cdf(1, v2(0.0, 0.0), 0.37), 0.37, 1e-12);
}

TEST(ConditionalCdf, SineMatchesClosedForm) {
  const auto s = ff::GridDensity::sine1d(1025);
  EXPECT_NEAR(s.conditional_cdf(1, Vec(0), 0.5), 0.5 + 1.0 / (2.0 * oracle::kPi), 1e-6);
  for (int i = 0; i <= 50; ++i) {
    const double x = i / 50.0;
    EXPECT_NEAR(s.conditional_cdf(1, Vec(0), x), oracle::sine_cdf(x), 2e-6) << x;
  }
}

TEST(ConditionalCdf, FullMassAndBoundaries) {
  const auto p = ff::GridDensity::product({sine, [](double x) { return 2.0 + x; }}, 40);
  for (double a : {0.0, 0.3, 1.0}) {
    EXPECT_NEAR(p.conditional_cdf(2, v2(a, 0.0), 1.0), 1.0, 1e-12);
    EXPECT_NEAR(p.conditional_cdf(2, v2(a, 0.0), 0.0), 0.0, 1e-12);
  }
  EXPECT_THROW(p.conditional_cdf(2, v2(0.5, 0.0), 1.2), ff::DomainError);
}

TEST(ConditionalCdf, MonotoneWithSlopeBounds) {
  const auto p = ff::GridDensity::product({sine, sine}, 65);
  const double lo = p.lower_bound() / p.upper_bound();
  const double hi = p.upper_bound() / p.lower_bound();
  const double h = 1e-4;
  for (double a : {0.1, 0.45, 0.8}) {
    double prev = -1.0;
    for (int i = 0; i <= 200; ++i) {
      const double x = i / 200.0;
      const double c = p.conditional_cdf(2, v2(a, 0.0), x);
      EXPECT_GE(c, prev);
      prev = c;
      if (x + h <= 1.0) {
        const double slope = (p.conditional_cdf(2, v2(a, 0.0), x + h) - c) / h;
        EXPECT_GE(slope, lo - 1e-9);
        EXPECT_LE(slope, hi + 1e-9);
      }
    }
  }
}

TEST(InverseConditionalCdf, Examples) {
  const auto u = ff::GridDensity::uniform(1, 16);
  EXPECT_NEAR(u.inverse_conditional_cdf(1, Vec(0), 0.42), 0.42, 1e-12);
  const auto s = ff::GridDensity::sine1d(1025);
  EXPECT_NEAR(s.inverse_conditional_cdf(1, Vec(0), 0.659155), 0.5, 1e-6);
  EXPECT_EQ(s.inverse_conditional_cdf(1, Vec(0), 0.0), 0.0);
  EXPECT_EQ(s.inverse_conditional_cdf(1, Vec(0), 1.0), 1.0);
}

TEST(InverseConditionalCdf, RoundTrip) {
  const auto p = ff::GridDensity::from_function(3, 17, [](const Vec& x) {
    return 1.0 + 0.5 * std::sin(2.0 * x[0] + x[1]) * std::cos(3.0 * x[2]);
  });
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    Vec prefix(3);
    prefix << U(rng), U(rng), U(rng);
    for (int k = 1; k <= 3; ++k) {
      for (int i = 0; i <= 20; ++i) {
        const double x = i / 20.0;
        const double c = p.conditional_cdf(k, prefix, x);
        EXPECT_NEAR(p.inverse_conditional_cdf(k, prefix, c), x, 1e-8);
        EXPECT_NEAR(p.conditional_cdf(k, prefix, p.inverse_conditional_cdf(k, prefix, x)), x,
                    1e-10);
      }
    }
  }
}

TEST(Sampling, MatchesSineMoments) {
  const auto s = ff::GridDensity::sine1d(257);
  std::mt19937_64 rng(11);
  const auto xs = s.sample(rng, 20000);
  double mean = 0.0;
  for (const auto& x : xs) mean += x[0];
  mean /= xs.size();
  // E[x] = 1/2 - 1/(4 pi) for 1 + 0.5 sin(2 pi x).
  EXPECT_NEAR(mean, 0.5 - 1.0 / (4.0 * oracle::kPi), 0.01);
}

TEST(Gradient, MatchesFiniteDifferencesInsideCells) {
  const auto p = ff::GridDensity::product({sine, sine}, 33);
  const Vec x = v2(0.311, 0.707);
  const Vec g = p.gradient_clamped(x);
  const Vec fd = oracle::fd_jacobian([&](const Vec& y) { return Vec::Constant(1, p.eval(y)); },
                                     x, 1e-7)
                     .row(0)
                     .transpose();
  EXPECT_NEAR((g - fd).norm(), 0.0, 1e-6);
  EXPECT_EQ(p.gradient_clamped(v2(1.2, 0.5))[0], 0.0);
}
