#include "eds/eds.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace eds;

namespace {

WeightedEnsemble toy_ensemble(std::size_t n, std::uint64_t seed, double spread = 1.5) {
  WeightedEnsemble e;
  CounterRng rng(seed, 0, 0);
  for (std::size_t i = 0; i < n; ++i) {
    e.particles.push_back({scalar_vec(rng.normal()), spread * rng.normal(), static_cast<std::int64_t>(i), -1});
  }
  return e;
}

double fraction_below(const WeightedEnsemble& e, double x0) {
  double c = 0;
  for (const auto& p : e.particles) c += p.x(0) < x0;
  return c / static_cast<double>(e.size());
}

}  // namespace

TEST(Ess, Examples) {
  EXPECT_DOUBLE_EQ(ess(std::vector<double>(8, 0.125)), 8.0);
  EXPECT_DOUBLE_EQ(ess(std::vector<double>{1.0, 0.0, 0.0}), 1.0);
  EXPECT_DOUBLE_EQ(ess(std::vector<double>{3.0, 1.0}), 16.0 / 10.0);
}

TEST(Ess, NormalizeIsShiftInvariant) {
  std::vector<double> lw{-1000.0, -1001.0, -999.5};
  auto a = normalize_log_weights(lw);
  for (double& v : lw) v += 2000.0;
  auto b = normalize_log_weights(lw);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-15);
  EXPECT_NEAR(std::accumulate(a.begin(), a.end(), 0.0), 1.0, 1e-15);
}

TEST(Resampling, StratifiedOffspringStayWithinOneStratum) {
  // one uniform per stratum: counts lie within floor(nw) - 1 and ceil(nw) + 1
  const auto e = toy_ensemble(50, 3);
  const auto w = e.normalized_weights();
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    CounterRng rng(seed, 0, 0);
    const auto counts = offspring_counts(stratified_indices(w, rng), w.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double nw = 50.0 * w[i];
      EXPECT_GE(static_cast<double>(counts[i]), std::floor(nw) - 1.0);
      EXPECT_LE(static_cast<double>(counts[i]), std::ceil(nw) + 1.0);
    }
  }
}

TEST(Resampling, StratifiedHeavyParticleKeepsFloor) {
  // a particle spanning more than two strata always keeps at least floor(nw) - 1 >= 1 copies
  std::vector<double> w(10, 0.05);
  w[3] = 0.55;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    CounterRng rng(seed, 0, 0);
    const auto counts = offspring_counts(stratified_indices(w, rng), w.size());
    EXPECT_GE(counts[3], 4u);
    EXPECT_LE(counts[3], 7u);
  }
}

TEST(Resampling, EqualWeightsAndLabels) {
  auto e = toy_ensemble(20, 5);
  for (std::size_t i = 0; i < e.size(); ++i) e.particles[i].trajectory_id = 100 + static_cast<std::int64_t>(i);
  CounterRng r1(6, 0, 0), r2(6, 0, 0);
  const auto fresh = stratified_resample(e, r1, ResampleLabels::kFresh);
  const auto kept = stratified_resample(e, r2, ResampleLabels::kInherit);
  ASSERT_EQ(fresh.size(), e.size());
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    EXPECT_DOUBLE_EQ(fresh.particles[i].log_weight, 0.0);
    EXPECT_EQ(fresh.particles[i].trajectory_id, static_cast<std::int64_t>(i));
    EXPECT_GE(fresh.particles[i].ancestor_id, 100);
    EXPECT_EQ(kept.particles[i].trajectory_id, kept.particles[i].ancestor_id);
  }
}

TEST(Resampling, LateBranchCopies) {
  auto e = toy_ensemble(4, 7);
  const auto b = late_branch(e, 1.0, 3);
  ASSERT_EQ(b.size(), 12u);
  EXPECT_EQ(b.particles[5].trajectory_id, e.particles[1].trajectory_id);
  EXPECT_THROW(late_branch(e, 1.0, 0), std::invalid_argument);
}

TEST(Steering, ValidatesConfig) {
  const auto m = make_double_well(-2.0);
  SteeringConfig sc;
  sc.n_steps = 1;
  EXPECT_THROW(sample_unbiased(m, NoiseSchedule{}, sc), ConfigError);
  sc = {};
  sc.ess_threshold = 1.5;
  EXPECT_THROW(sample_unbiased(m, NoiseSchedule{}, sc), ConfigError);
}

TEST(Steering, DeterministicPerSeed) {
  const auto m = make_double_well(-4.0);
  SteeringConfig sc;
  sc.n_particles = 64;
  sc.seed = 9;
  BiasSchedule b(BiasPotential::linear_tilt(equalizing_slope(m)));
  const auto a = steer(m, NoiseSchedule{}, b, sc);
  const auto c = steer(m, NoiseSchedule{}, b, sc);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.particles[i].x(0), c.particles[i].x(0));
    EXPECT_EQ(a.particles[i].log_weight, c.particles[i].log_weight);
  }
  sc.seed = 10;
  const auto d = steer(m, NoiseSchedule{}, b, sc);
  EXPECT_NE(a.particles[0].x(0), d.particles[0].x(0));
}

TEST(Steering, UnbiasedRecoversBasinWeights) {
  const auto m = make_double_well(-1.0);
  SteeringConfig sc;
  sc.n_particles = 20000;
  sc.seed = 2;
  const auto e = sample_unbiased(m, NoiseSchedule{}, sc);
  const double p_a = 1.0 / (1.0 + std::exp(-1.0));
  EXPECT_NEAR(fraction_below(e, 0.0), p_a, 4.0 * std::sqrt(p_a * (1 - p_a) / 20000));
  for (const auto& p : e.particles) ASSERT_EQ(p.log_weight, 0.0);
}

TEST(Steering, TiltEqualisesBasins) {
  const auto m = make_double_well(-7.0);
  SteeringConfig sc;
  sc.n_particles = 4000;
  sc.seed = 3;
  const auto b = BiasPotential::linear_tilt(equalizing_slope(m));
  const auto e = steer(m, NoiseSchedule{}, BiasSchedule(b), sc);
  const auto w = e.normalized_weights();
  double mass_a = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) mass_a += w[i] * (e.particles[i].x(0) < 0.0);
  EXPECT_NEAR(mass_a, 0.5, 0.05);
  const auto d = dg_from_membership(direct_reweight_samples(e, b), below(barrier_location(m)), 200, 1);
  EXPECT_FALSE(d.failure);
  EXPECT_NEAR(d.dg_kbt, -7.0, 4.0 * d.standard_error + 0.1);
}

TEST(Steering, StepLogAndTerminalResample) {
  const auto m = make_double_well(-4.0);
  SteeringConfig sc;
  sc.n_particles = 200;
  sc.n_steps = 50;
  sc.terminal_resample = true;
  const auto e = steer(m, NoiseSchedule{}, BiasSchedule(BiasPotential::linear_tilt(-2.0)), sc);
  ASSERT_EQ(e.step_log.size(), 50u);
  EXPECT_NEAR(e.step_log.back().t, NoiseSchedule{}.t_end(), 1e-12);
  EXPECT_TRUE(e.step_log.back().resampled);
  EXPECT_NEAR(e.ess(), 200.0, 1e-9);
  EXPECT_LE(e.terminal_ess, 200.0);
}

TEST(Steering, BranchMultipliesParticles) {
  const auto m = make_double_well(-2.0);
  SteeringConfig sc;
  sc.n_particles = 30;
  sc.branch = BranchConfig{0.9, 2};
  const auto e = steer(m, NoiseSchedule{}, BiasSchedule(BiasPotential::linear_tilt(-1.0)), sc);
  EXPECT_EQ(e.size(), 60u);
}

TEST(Estimators, DirectReweightFactor) {
  const auto e = toy_ensemble(10, 11);
  const auto b = BiasPotential::linear_tilt(0.7);
  const auto lw = direct_reweight_log(e, b);
  for (std::size_t i = 0; i < e.size(); ++i) {
    EXPECT_DOUBLE_EQ(lw[i], e.particles[i].log_weight + 0.7 * e.particles[i].x(0));
  }
}

TEST(Estimators, DgFailureFlag) {
  WeightedSamples s;
  for (int i = 0; i < 5; ++i) {
    s.x.push_back(scalar_vec(1.0 + i));
    s.log_weight.push_back(0.0);
    s.cluster.push_back(static_cast<std::size_t>(i));
  }
  const auto d = dg_from_membership(s, below(0.0));
  EXPECT_TRUE(d.failure);
  EXPECT_TRUE(std::isnan(d.dg_kbt));
}

TEST(Estimators, DgFromMembershipClosedForm) {
  WeightedSamples s;
  for (int i = 0; i < 4; ++i) {
    s.x.push_back(scalar_vec(i < 1 ? -1.0 : 1.0));
    s.log_weight.push_back(0.0);
    s.cluster.push_back(static_cast<std::size_t>(i));
  }
  const auto d = dg_from_membership(s, below(0.0), 0);
  EXPECT_NEAR(d.dg_kbt, std::log(3.0), 1e-14);
  EXPECT_NEAR(d.dg_kcal, std::log(3.0) * kKcalPerKbt300, 1e-14);
}

TEST(Estimators, BootstrapUsesClusters) {
  // duplicated samples in one cluster behave like a single draw
  WeightedSamples s;
  CounterRng rng(12, 0, 0);
  for (std::size_t c = 0; c < 200; ++c) {
    const double v = rng.normal();
    for (int k = 0; k < 5; ++k) {
      s.x.push_back(scalar_vec(v));
      s.log_weight.push_back(0.0);
      s.cluster.push_back(c);
    }
  }
  const auto e = expectation(s, [](const Vec& x) { return x(0); }, 2000, 1);
  EXPECT_NEAR(e.standard_error, 1.0 / std::sqrt(200.0), 0.015);
  EXPECT_LT(e.ci_low, e.value);
  EXPECT_GT(e.ci_high, e.value);
}

TEST(Estimators, HistogramPmfOfGaussian) {
  const auto m = GaussianMixture({{1.0, scalar_vec(0.0), Mat::Identity(1, 1)}});
  SteeringConfig sc;
  sc.n_particles = 40000;
  sc.n_steps = 400;
  const auto e = sample_unbiased(m, NoiseSchedule{}, sc);
  PmfOptions po;
  po.edges = uniform_edges(-2.0, 2.0, 20);
  po.n_boot = 20;
  const auto pmf = pmf_estimate(from_ensemble(e), CollectiveVariable::projection(0), po);
  const auto exact = exact_pmf(m, CollectiveVariable::projection(0), *po.edges);
  EXPECT_LT(compare_pmf(pmf.values, exact.values).max_error, 0.15);
  EXPECT_EQ(pmf.standard_errors.size(), 20u);
}

TEST(Estimators, KernelPmfAndBandwidth) {
  std::vector<double> xi, w;
  CounterRng rng(13, 0, 0);
  for (int i = 0; i < 5000; ++i) {
    xi.push_back(rng.normal());
    w.push_back(1.0 / 5000);
  }
  // Silverman: 0.9 * min(sd, IQR/1.34) * n^{-1/5}
  EXPECT_NEAR(silverman_bandwidth(xi, w), 0.9 * std::pow(5000.0, -0.2), 0.02);
  WeightedSamples s;
  for (double v : xi) {
    s.x.push_back(scalar_vec(v));
    s.log_weight.push_back(0.0);
    s.cluster.push_back(s.cluster.size());
  }
  PmfOptions po;
  po.kind = PmfKind::kKernel;
  po.grid = std::vector<double>{-1.0, 0.0, 1.0};
  po.n_boot = 0;
  const auto pmf = pmf_estimate(s, CollectiveVariable::projection(0), po);
  EXPECT_NEAR(pmf.values[0], 0.5, 0.1);
  EXPECT_NEAR(pmf.values[1], 0.0, 1e-12);
}

TEST(Estimators, ComparePmfUsesMidrangeOffset) {
  const std::vector<double> a{1.0, 2.0, 3.0};
  const std::vector<double> b{0.0, 0.5, 3.0};
  const auto c = compare_pmf(a, b);
  // differences 1, 1.5, 0 -> midrange 0.75
  EXPECT_DOUBLE_EQ(c.offset, 0.75);
  EXPECT_DOUBLE_EQ(c.max_error, 0.75);
  const auto masked = compare_pmf(a, b, {true, true, false});
  EXPECT_DOUBLE_EQ(masked.max_error, 0.25);
  EXPECT_EQ(masked.n_bins, 2u);
}
