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

#include "flowforge/metrics.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

namespace ff = flowforge;
using ff::Vec;

namespace {

constexpr int kFine = 1025;

ff::GridDensity sine(int m = kFine) { return ff::GridDensity::sine1d(m); }
ff::GridDensity uniform(int m = kFine) { return ff::GridDensity::uniform(1, m); }

ff::GridDensity random_density(std::mt19937_64& rng, int dim, int m) {
  std::uniform_real_distribution<double> a(-0.4, 0.4), f(0.5, 4.0), ph(0.0, 6.0);
  std::vector<std::array<double, 3>> terms(dim);
  for (auto& t : terms) t = {a(rng), f(rng), ph(rng)};
  return ff::GridDensity::from_function(dim, m, [terms](const Vec& x) {
    double v = 1.0;
    for (std::size_t k = 0; k < terms.size(); ++k)
      v *= 1.0 + terms[k][0] * std::sin(terms[k][1] * x[k] + terms[k][2]);
    return v;
  });
}

std::vector<Vec> points1d(std::initializer_list<double> xs) {
  std::vector<Vec> out;
  for (double x : xs) out.push_back(Vec::Constant(1, x));
  return out;
}

double brute_wasserstein(const std::vector<Vec>& a, const std::vector<Vec>& b, double p) {
  const int n = static_cast<int>(a.size());
  ff::Mat cost(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) cost(i, j) = (a[i] - b[j]).norm();
  const bool inf = std::isinf(p);
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double acc = 0.0;
    for (int i = 0; i < n; ++i)
      acc = inf ? std::max(acc, cost(i, perm[i])) : acc + std::pow(cost(i, perm[i]), p);
    best = std::min(best, inf ? acc : std::pow(acc / n, 1.0 / p));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST(Divergences, VanishOnIdenticalInputs) {
  const auto s = sine(65);
  EXPECT_EQ(ff::l2_density_distance(s, s), 0.0);
  EXPECT_EQ(ff::chi2_divergence(s, s), 0.0);
  EXPECT_EQ(ff::kl_divergence(s, s), 0.0);
}

TEST(Divergences, L2OfSinePerturbation) {
  EXPECT_NEAR(ff::l2_density_distance(uniform(), sine()), 0.5 / std::sqrt(2.0), 1e-6);
  EXPECT_EQ(ff::l2_density_distance(uniform(), sine()), ff::l2_density_distance(sine(), uniform()));
}

TEST(Divergences, ShapeMismatchIsAnArgumentError) {
  EXPECT_THROW(ff::l2_density_distance(uniform(33), uniform(65)), ff::ArgumentError);
  EXPECT_THROW(ff::kl_divergence(uniform(33), ff::GridDensity::uniform(2, 33)), ff::ArgumentError);
}

TEST(Divergences, ChiSquareMatchesQuadrature) {
  const double chi2 = ff::chi2_divergence(uniform(), sine());
  const double oracle_value = oracle::integrate([](double x) {
    const double q = oracle::sine_pdf(x);
    return (1.0 - q) * (1.0 - q) / q;
  });
  EXPECT_NEAR(chi2, oracle_value, 1e-6);
  EXPECT_LE(chi2, 0.25);
}

TEST(Divergences, ChiSquareTaylorExpansion) {
  const double eps = 1e-3;
  const auto q = sine();
  const auto p = ff::GridDensity::from_function(1, kFine, [eps](const Vec& x) {
    return oracle::sine_pdf(x[0]) * (1.0 + eps * std::cos(2.0 * oracle::kPi * x[0]));
  });
  // phi = cos(2 pi x) has mean zero under q and int phi^2 q = 1/2.
  EXPECT_NEAR(ff::chi2_divergence(p, q), 0.5 * eps * eps, 1e-2 * 0.5 * eps * eps);
}

TEST(Divergences, KlMatchesQuadratureAndIsAsymmetric) {
  const double kl_us = ff::kl_divergence(uniform(), sine());
  const double kl_su = ff::kl_divergence(sine(), uniform());
  const double o_us = oracle::integrate([](double x) { return -std::log(oracle::sine_pdf(x)); });
  const double o_su = oracle::integrate(
      [](double x) { return oracle::sine_pdf(x) * std::log(oracle::sine_pdf(x)); });
  EXPECT_NEAR(kl_us, o_us, 1e-6);
  EXPECT_NEAR(kl_su, o_su, 1e-6);
  EXPECT_GT(std::abs(kl_us - kl_su), 1e-3);
  EXPECT_LE(kl_us, std::log1p(ff::chi2_divergence(uniform(), sine())));
}

TEST(Divergences, OrderingOnRandomPairs) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const int dim = 1 + trial % 2;
    const int m = dim == 1 ? 257 : 33;
    const auto p = random_density(rng, dim, m);
    const auto q = random_density(rng, dim, m);
    const double l2sq = std::pow(ff::l2_density_distance(p, q), 2);
    const double chi2 = ff::chi2_divergence(p, q);
    EXPECT_GT(chi2, 0.0);
    EXPECT_LE(l2sq / q.upper_bound(), chi2 + 1e-12);
    EXPECT_LE(chi2, l2sq / q.lower_bound() + 1e-12);
    EXPECT_LE(ff::kl_divergence(p, q), std::log1p(chi2) + 1e-12);
  }
}

TEST(Divergences, L2TriangleInequality) {
  std::mt19937_64 rng(9);
  const auto a = random_density(rng, 2, 33), b = random_density(rng, 2, 33),
             c = random_density(rng, 2, 33);
  EXPECT_LE(ff::l2_density_distance(a, c),
            ff::l2_density_distance(a, b) + ff::l2_density_distance(b, c) + 1e-15);
}

TEST(Wasserstein, SmallOneDimensionalExample) {
  EXPECT_NEAR(ff::wasserstein(points1d({0.2, 0.4}), points1d({0.5, 0.3}), 1.0), 0.1, 1e-15);
  EXPECT_EQ(ff::wasserstein(points1d({0.2, 0.4}), points1d({0.4, 0.2}), 2.0), 0.0);
}

TEST(Wasserstein, SortedCouplingMatchesExhaustiveAssignment) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n = 1; n <= 8; ++n) {
    std::vector<Vec> a, b;
    for (int i = 0; i < n; ++i) {
      a.push_back(Vec::Constant(1, u(rng)));
      b.push_back(Vec::Constant(1, u(rng)));
    }
    for (double p : {1.0, 2.0, std::numeric_limits<double>::infinity()})
      EXPECT_NEAR(ff::wasserstein(a, b, p), brute_wasserstein(a, b, p), 1e-12) << n << " " << p;
  }
}

TEST(Wasserstein, AssignmentMatchesBruteForceInTwoDimensions) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n : {2, 5, 7}) {
    std::vector<Vec> a, b;
    for (int i = 0; i < n; ++i) {
      a.push_back(Vec{{u(rng), u(rng)}});
      b.push_back(Vec{{u(rng), u(rng)}});
    }
    for (double p : {1.0, 2.0, std::numeric_limits<double>::infinity()})
      EXPECT_NEAR(ff::wasserstein(a, b, p), brute_wasserstein(a, b, p), 1e-12) << n << " " << p;
  }
}

TEST(Wasserstein, TranslationGivesTheShift) {
  std::mt19937_64 rng(12);
  const auto a = uniform(65).sample(rng, 1000);
  std::vector<Vec> b;
  for (const auto& x : a) b.push_back((x.array() * 0.9 + 0.1).matrix());
  // Quantile oracle: int_0^1 |0.1 - 0.1 u| du = 0.05, up to sampling error.
  EXPECT_NEAR(ff::wasserstein(a, b, 1.0), 0.05, 3e-3);
}

TEST(Wasserstein, Errors) {
  EXPECT_THROW(ff::wasserstein(points1d({0.1}), points1d({0.1, 0.2}), 1.0), ff::ArgumentError);
  const auto pts2 = ff::halton_points(2, 300);
  EXPECT_THROW(ff::wasserstein(pts2, pts2, 1.0), ff::CapabilityError);
  const auto pts1 = ff::halton_points(1, 5000);
  EXPECT_THROW(ff::wasserstein(pts1, pts1, 1.0), ff::CapabilityError);
}

namespace {

ff::StraightLineField sine_field() {
  return ff::StraightLineField(ff::TriangularMap(sine(257), uniform(257)));
}

ff::GronwallOptions quick_gronwall() {
  ff::GronwallOptions o;
  o.flow_points = 50;
  o.sup_points = 2000;
  o.lipschitz_points = 300;
  return o;
}

}  // namespace

TEST(Gronwall, IdenticalFieldsHaveZeroDeviation) {
  const auto f = sine_field();
  const auto res = ff::verify_gronwall(f, f, f.map().source(), ff::IntegratorConfig{20},
                                       quick_gronwall());
  EXPECT_EQ(res.measured, 0.0);
  EXPECT_EQ(res.bound, 0.0);
  EXPECT_TRUE(res.satisfied);
}

TEST(Gronwall, BumpPerturbationsSatisfyTheBound) {
  const auto f = sine_field();
  double measured[2];
  int i = 0;
  for (double eps : {1e-3, 1e-2}) {
    std::mt19937_64 rng(13);
    const ff::PerturbedField g(f, ff::BumpPerturbation::random(1, eps, rng));
    const auto res = ff::verify_gronwall(f, g, f.map().source(), ff::IntegratorConfig{20},
                                         quick_gronwall());
    EXPECT_TRUE(res.satisfied) << eps;
    EXPECT_GT(res.slack, 0.0);
    EXPECT_GT(res.measured, 0.0);
    measured[i++] = res.measured;
  }
  EXPECT_NEAR(measured[1] / measured[0], 10.0, 1.0);
}

TEST(Gronwall, TwoDimensionalResNet) {
  std::mt19937_64 rng(14);
  const auto f = ff::ResNetField::random(2, 8, 2, rng, 1.0, 0.0, ff::Activation::Tanh, true);
  const ff::PerturbedField g(f, ff::BumpPerturbation::random(2, 1e-2, rng));
  const auto res = ff::verify_gronwall(f, g, ff::GridDensity::uniform(2, 17),
                                       ff::IntegratorConfig{20}, quick_gronwall());
  EXPECT_TRUE(res.satisfied);
}

namespace {

ff::L2StabilityOptions quick_l2() {
  ff::L2StabilityOptions o;
  o.nodes_per_axis = 64;
  o.sup_points = 1000;
  return o;
}

}  // namespace

TEST(L2Stability, IdenticalFieldsMeasureNearZero) {
  const auto f = sine_field();
  const auto res = ff::verify_l2_stability(f, f, f.map().source(), ff::IntegratorConfig{20},
                                           quick_l2());
  EXPECT_LT(res.measured, 1e-10);
  EXPECT_EQ(res.details.at("delta_hat"), 0.0);
}

TEST(L2Stability, BoundHoldsAndScalesQuadratically) {
  const auto f = sine_field();
  double measured[2];
  int i = 0;
  for (double eps : {2e-3, 1e-3}) {
    std::mt19937_64 rng(15);
    const ff::PerturbedField g(f, ff::BumpPerturbation::random(1, eps, rng));
    const auto res = ff::verify_l2_stability(f, g, f.map().source(), ff::IntegratorConfig{20},
                                             quick_l2());
    EXPECT_TRUE(res.satisfied) << eps << " " << res.measured << " " << res.bound;
    measured[i++] = res.measured;
  }
  const double ratio = measured[0] / measured[1];
  EXPECT_GT(ratio, 2.0);
  EXPECT_LT(ratio, 8.0);
}

TEST(BoundCheckResult, SatisfiedIffWithinTolerance) {
  EXPECT_TRUE(ff::BoundCheckResult::make(1.0, 1.0).satisfied);
  EXPECT_TRUE(ff::BoundCheckResult::make(1.0 + 5e-13, 1.0).satisfied);
  EXPECT_FALSE(ff::BoundCheckResult::make(1.0 + 1e-11, 1.0).satisfied);
  EXPECT_DOUBLE_EQ(ff::BoundCheckResult::make(0.25, 1.0).slack, 0.75);
}
