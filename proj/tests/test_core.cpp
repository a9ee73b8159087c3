#include "eds/eds.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <gtest/gtest.h>

using namespace eds;

namespace {

GaussianMixture standard_normal() { return GaussianMixture({{1.0, scalar_vec(0.0), Mat::Identity(1, 1)}}); }

double gk(const std::function<double(double)>& f, double lo, double hi) {
  return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, hi, 15, 1e-13);
}

}  // namespace

TEST(CounterRng, SameKeySameStream) {
  CounterRng a(5, 3, 7), b(5, 3, 7), c(5, 3, 8);
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    EXPECT_NE(x, c.next_u64());
  }
}

TEST(CounterRng, UniformAndNormalMoments) {
  CounterRng rng(1, 0, 0);
  const int n = 200000;
  double su = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 4 * std::sqrt(1.0 / 12 / n));
  EXPECT_NEAR(sn / n, 0.0, 4 / std::sqrt(n));
  EXPECT_NEAR(sn2 / n, 1.0, 4 * std::sqrt(2.0 / n));
}

TEST(CounterRng, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 2, 4));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 3));
  EXPECT_EQ(derive_seed(9, 8, 7), derive_seed(9, 8, 7));
}

TEST(NoiseSchedule, EndpointsAndClosedForms) {
  NoiseSchedule s;
  EXPECT_DOUBLE_EQ(s.beta(0.0), 20.0);
  EXPECT_NEAR(s.beta(1.0), 0.1, 1e-12);
  EXPECT_DOUBLE_EQ(s.t_end(), 1.0 - 1e-3);
  EXPECT_DOUBLE_EQ(s.integrated_beta(1.0), 0.0);
  // int_0^1 (20 - 19.9 r) dr = 10.05
  EXPECT_NEAR(s.integrated_beta(0.0), 10.05, 1e-12);
  for (double t : {0.0, 0.3, 0.7, 0.999}) {
    EXPECT_NEAR(s.alpha(t) * s.alpha(t) + s.noise_variance(t), 1.0, 1e-12);
    const double num = gk([&](double r) { return s.beta(r); }, t, 1.0);
    EXPECT_NEAR(s.integrated_beta(t), num, 1e-10);
  }
  EXPECT_THROW(NoiseSchedule(0.0, 20.0, 1e-3), std::invalid_argument);
  EXPECT_THROW(NoiseSchedule(0.1, 20.0, 0.6), std::invalid_argument);
}

TEST(GaussianMixture, RejectsBadInput) {
  Mat cov = Mat::Identity(1, 1);
  EXPECT_THROW(GaussianMixture({{0.5, scalar_vec(0.0), cov}}), std::invalid_argument);
  EXPECT_THROW(GaussianMixture({{1.0, scalar_vec(0.0), -cov}}), std::invalid_argument);
  EXPECT_THROW(GaussianMixture(std::vector<MixtureComponent>{}), std::invalid_argument);
  Mat asym(2, 2);
  asym << 1.0, 0.2, 0.1, 1.0;
  EXPECT_THROW(GaussianMixture({{1.0, make_vec({0, 0}), asym}}), std::invalid_argument);
}

TEST(GaussianMixture, DensityIntegratesToOne) {
  const auto m = make_double_well(-3.0);
  const double z = gk([&](double x) { return std::exp(m.log_density(scalar_vec(x))); }, -4.0, 4.0);
  EXPECT_NEAR(z, 1.0, 1e-10);
}

TEST(GaussianMixture, ScoreMatchesFiniteDifference) {
  const auto m = three_state_surface();
  NoiseSchedule s;
  for (double t : {0.1, 0.5, 0.99}) {
    const auto d = m.diffused(s, t);
    const Vec x = make_vec({0.3, 1.1});
    const Vec g = d.score(x);
    for (int i = 0; i < 2; ++i) {
      Vec xp = x, xm = x;
      xp(i) += 1e-6;
      xm(i) -= 1e-6;
      EXPECT_NEAR(g(i), (d.log_density(xp) - d.log_density(xm)) / 2e-6, 1e-5);
    }
  }
}

TEST(GaussianMixture, DiffusedStandardNormalStaysStandard) {
  const auto m = standard_normal();
  NoiseSchedule s;
  for (double t : {0.0, 0.5, 0.9}) {
    const auto d = m.diffused(s, t);
    EXPECT_NEAR(d.score(scalar_vec(1.3))(0), -1.3, 1e-12);
  }
}

TEST(GaussianMixture, MarginalDropsOtherAxes) {
  const auto m = three_state_surface().marginal(1);
  ASSERT_EQ(m.dimension(), 1);
  EXPECT_DOUBLE_EQ(m.components()[2].mean(0), 3.2);
  EXPECT_DOUBLE_EQ(m.components()[2].covariance(0, 0), 0.09);
}

TEST(CollectiveVariable, SigmoidValueAndGradient) {
  const auto cv = CollectiveVariable::sigmoid(1, 0.5, 0.2);
  const Vec x = make_vec({3.0, 0.5});
  EXPECT_DOUBLE_EQ(cv.value(x), 0.5);
  EXPECT_NEAR(cv.gradient(x)(1), 0.25 / 0.2, 1e-12);
  EXPECT_DOUBLE_EQ(cv.gradient(x)(0), 0.0);
  EXPECT_NEAR(cv.value(make_vec({0.0, 100.0})), 1.0, 1e-15);
  EXPECT_NEAR(cv.value(make_vec({0.0, -100.0})), 0.0, 1e-15);
}

TEST(Bias, ClosedFormValues) {
  const Vec x = make_vec({0.5, -1.0});
  EXPECT_DOUBLE_EQ(BiasPotential::zero().value(x), 0.0);
  EXPECT_DOUBLE_EQ(BiasPotential::linear_tilt(2.0).value(x), 1.0);
  EXPECT_DOUBLE_EQ(BiasPotential::harmonic(1.0, 4.0).value(x), 0.5 * 4.0 * 0.25);
  EXPECT_DOUBLE_EQ(BiasPotential::harmonic(0.0, 2.0, CollectiveVariable::projection(1)).value(x), 1.0);
  // clamped between c_min and c_max
  const auto c = BiasPotential::clamped_linear(3.0, -0.2, 0.1);
  EXPECT_DOUBLE_EQ(c.value(x), 0.3);
  EXPECT_DOUBLE_EQ(c.value(make_vec({-5.0, 0.0})), -0.6);
  const auto centered = BiasPotential::linear_tilt(2.0, CollectiveVariable::sigmoid(0, 0.0, 1.0), true);
  EXPECT_NEAR(centered.value(make_vec({0.0, 0.0})), 0.0, 1e-15);
  EXPECT_THROW(BiasPotential::harmonic(0.0, -1.0), std::invalid_argument);
  EXPECT_THROW(BiasPotential::clamped_linear(1.0, 1.0, 0.0), std::invalid_argument);
}

TEST(Bias, HillSumKernelMass) {
  HillSum h(0.3, CollectiveVariable::projection(0));
  h.deposit(0.4, 2.0);
  const double mass = gk([&](double x) { return h.exact(x).first; }, -5.0, 5.0);
  EXPECT_NEAR(mass, 2.0, 1e-10);
  EXPECT_NEAR(h.exact(0.4).first, 2.0 / (std::sqrt(2 * std::numbers::pi) * 0.3), 1e-12);
  const auto t = h.tabulated(-3.0, 3.0);
  for (double x : {-1.1, 0.0, 0.37, 0.9}) {
    EXPECT_NEAR(t.in_cv(x).first, h.exact(x).first, 1e-8);
    EXPECT_NEAR(t.in_cv(x).second, h.exact(x).second, 1e-5);
  }
}

TEST(Bias, SumAddsTerms) {
  const BiasPotential s = SumOfBiases{{BiasPotential::linear_tilt(1.0), BiasPotential::harmonic(0.0, 2.0)}};
  EXPECT_DOUBLE_EQ(s.value(scalar_vec(0.5)), 0.5 + 0.25);
  EXPECT_DOUBLE_EQ(s.eval(scalar_vec(0.5)).gradient(0), 1.0 + 1.0);
}

TEST(BiasSchedule, InterpolationsHitEndpoints) {
  for (auto i : {Interpolation::kLinear, Interpolation::kSmoothstep}) {
    BiasSchedule s(BiasPotential::linear_tilt(1.0), i);
    EXPECT_DOUBLE_EQ(s.lambda(0.0), 0.0);
    EXPECT_DOUBLE_EQ(s.lambda(1.0), 1.0);
    for (double t : {0.2, 0.5, 0.8}) {
      EXPECT_NEAR(s.lambda_deriv(t), (s.lambda(t + 1e-6) - s.lambda(t - 1e-6)) / 2e-6, 1e-8);
    }
    EXPECT_THROW(s.eval(1.5, scalar_vec(0.0)), std::invalid_argument);
  }
}

TEST(Quadrature, DoubleWellOracle) {
  // independent scipy quadrature, frozen
  const std::vector<std::tuple<double, double>> ref = {
      {-2.0, 0.015873037314}, {-7.0, 0.055556465004}, {-14.0, 0.111118423891}};
  for (const auto& [dg, barrier] : ref) {
    const auto m = make_double_well(dg);
    const double x0 = barrier_location(m);
    EXPECT_NEAR(x0, barrier, 1e-6);
    EXPECT_NEAR(exact_free_energy_difference(m, below(x0)), dg, 1e-9);
  }
}

TEST(Quadrature, ThreeStateOracle) {
  const auto m = three_state_surface();
  EXPECT_NEAR(exact_free_energy_difference(m, above(0.0)), -0.073741880097, 1e-9);
  const auto pmf = exact_pmf(m, CollectiveVariable::projection(0), uniform_edges(-3.0, 3.0, 64));
  const std::vector<std::pair<std::size_t, double>> ref = {
      {0, 5.189593524496}, {16, 0.0}, {32, 0.823248006818}, {48, 0.400302577850}, {63, 5.595058631976}};
  for (const auto& [j, v] : ref) EXPECT_NEAR(pmf.values[j], v, 1e-8) << "bin " << j;
}

TEST(Quadrature, MembershipMassesSumToOne) {
  const auto m = make_double_well(-10.0);
  const auto mm = membership_masses(m, below(0.0));
  EXPECT_NEAR(mm.inside + mm.outside, 1.0, 1e-12);
  EXPECT_NEAR(std::log(mm.outside), -10.0, 1e-4);
}

TEST(Surfaces, DoubleWellConstruction) {
  const auto m = make_double_well(-7.0);
  EXPECT_NEAR(std::log(m.components()[0].weight / m.components()[1].weight), 7.0, 1e-12);
  EXPECT_DOUBLE_EQ(equalizing_slope(m), -3.5);
  EXPECT_THROW(make_double_well(-1.0, 0.2, 0.125), std::invalid_argument);
  EXPECT_THROW(make_double_well(std::nan("")), std::invalid_argument);
  // large |dg| keeps the minority weight accurate
  const auto tiny = make_double_well(-700.0);
  EXPECT_GT(tiny.components()[1].weight, 0.0);
}

TEST(Surfaces, ParseKinds) {
  EXPECT_EQ(parse_surface_kind("three-state"), SurfaceKind::kThreeState);
  EXPECT_EQ(to_string(SurfaceKind::kTwoState), "two-state");
  EXPECT_THROW(parse_surface_kind("four-state"), ConfigError);
  EXPECT_THROW(make_surface(SurfaceKind::kMixture), std::invalid_argument);
}
