#include "eds/eds.hpp"

#include <gtest/gtest.h>

using namespace eds;

namespace {

SteeringConfig small_steering(std::size_t n, std::uint64_t seed, std::size_t steps = 200) {
  SteeringConfig sc;
  sc.n_particles = n;
  sc.n_steps = steps;
  sc.seed = seed;
  return sc;
}

}  // namespace

// ---------------------------------------------------------------- umbrella

TEST(Umbrella, DesignWindows) {
  const auto w = design_windows(-3.0, 3.0, 7);
  ASSERT_EQ(w.size(), 7u);
  EXPECT_DOUBLE_EQ(w[3].center, 0.0);
  EXPECT_DOUBLE_EQ(w[0].stiffness, 1.0);
  EXPECT_THROW(design_windows(0.0, 1.0, 1), ConfigError);
  EXPECT_THROW(design_windows(1.0, 0.0, 3), ConfigError);
  // sigma_k equals the spacing: Bhattacharyya exp(-1/8)
  for (const auto& o : nominal_overlaps(w)) EXPECT_NEAR(o.bhattacharyya, std::exp(-0.125), 1e-12);
}

TEST(Umbrella, GaussianOverlapClosedForms) {
  EXPECT_DOUBLE_EQ(gaussian_bhattacharyya(0.0, 1.0), 1.0);
  EXPECT_NEAR(gaussian_bhattacharyya(2.0, 1.0), std::exp(-0.5), 1e-15);
  EXPECT_DOUBLE_EQ(gaussian_overlap_area(0.0, 1.0), 1.0);
  // 2 Phi(-1)
  EXPECT_NEAR(gaussian_overlap_area(2.0, 1.0), 0.3173105078629141, 1e-14);
}

TEST(Umbrella, KdeOverlapOfIdenticalSamplesIsOne) {
  std::vector<double> x, w;
  CounterRng rng(1, 0, 0);
  for (int i = 0; i < 400; ++i) {
    x.push_back(rng.normal());
    w.push_back(1.0 / 400);
  }
  EXPECT_NEAR(kde_overlap(x, w, x, w, 0.2), 1.0, 1e-3);
  std::vector<double> far(x);
  for (double& v : far) v += 20.0;
  EXPECT_LT(kde_overlap(x, w, far, w, 0.2), 1e-10);
}

TEST(Umbrella, PreconditionUsesPilotVariance) {
  WeightedEnsemble pilot;
  CounterRng rng(2, 0, 0);
  for (int i = 0; i < 4000; ++i) pilot.particles.push_back({scalar_vec(0.5 * rng.normal()), 0.0, i, -1});
  auto w = precondition({UmbrellaWindow{0.0, 1.0, 0}}, {pilot}, CollectiveVariable::projection(0));
  EXPECT_NEAR(w[0].stiffness, 4.0, 0.25);
  pilot.particles.resize(10);
  EXPECT_THROW(precondition({UmbrellaWindow{0.0, 1.0, 0}}, {pilot}, CollectiveVariable::projection(0)), ConfigError);
}

TEST(Umbrella, RejectsUnorderedWindows) {
  UmbrellaConfig u;
  u.windows = {UmbrellaWindow{1.0, 1.0, 0}, UmbrellaWindow{0.0, 1.0, 0}};
  EXPECT_THROW(run_umbrelladiff(two_state_surface(), NoiseSchedule{}, u), ConfigError);
}

TEST(Umbrella, TwoStatePmf) {
  UmbrellaConfig u;
  u.windows = design_windows(-2.5, 2.5, 6);
  u.steering = small_steering(3000, 3, 500);
  u.n_boot = 20;
  const auto surface = two_state_surface();
  const auto r = run_umbrelladiff(surface, NoiseSchedule{}, u);
  EXPECT_EQ(r.ensembles.size(), 6u);
  EXPECT_EQ(r.free_energy_se.size(), 6u);
  EXPECT_TRUE(r.diagnostics.overlap.connected);
  const auto exact = exact_pmf(surface, u.cv, r.pmf.edges);
  EXPECT_LT(compare_pmf(r.pmf.values, exact.values).max_error, 1.0);
}

TEST(Umbrella, AutoBridgeInsertsMidpoints) {
  UmbrellaConfig u;
  u.windows = {UmbrellaWindow{-2.0, 25.0, 0}, UmbrellaWindow{0.0, 25.0, 0}, UmbrellaWindow{2.0, 25.0, 0}};
  u.steering = small_steering(300, 4, 100);
  u.n_boot = 0;
  u.auto_bridge_rounds = 1;
  const auto r = run_umbrelladiff(two_state_surface(), NoiseSchedule{}, u);
  EXPECT_EQ(r.diagnostics.bridge_rounds, 1u);
  EXPECT_GT(r.windows.size(), 3u);
  for (std::size_t k = 1; k < r.windows.size(); ++k) EXPECT_GT(r.windows[k].center, r.windows[k - 1].center);
}

// ---------------------------------------------------------------- metadiff

TEST(MetaDiff, DepositMassesSumToH) {
  MetaDiffState s(0.3, CollectiveVariable::projection(0));
  WeightedEnsemble e;
  for (int i = 0; i < 5; ++i) e.particles.push_back({scalar_vec(0.1 * i), 0.0, i, -1});
  MetaDiffParams p;
  p.gamma = std::numeric_limits<double>::infinity();
  p.h0 = 2.0;
  p.rho = 0.5;
  deposit_batch(s, e, p);
  deposit_batch(s, e, p);
  ASSERT_EQ(s.bias.size(), 10u);
  double first = 0, second = 0;
  for (const auto& d : s.deposits) (d.iteration == 1 ? first : second) += d.amplitude;
  EXPECT_NEAR(first, 2.0, 1e-12);
  EXPECT_NEAR(second, 1.0, 1e-12);
  EXPECT_EQ(s.iteration, 2u);
}

TEST(MetaDiff, WellTemperedAmplitudes) {
  MetaDiffState s(0.5, CollectiveVariable::projection(0));
  WeightedEnsemble e;
  e.particles.push_back({scalar_vec(0.0), 0.0, 0, -1});
  e.particles.push_back({scalar_vec(0.0), 0.0, 1, -1});
  MetaDiffParams p;
  p.gamma = 5.0;
  p.h0 = 1.0;
  deposit_batch(s, e, p);
  const double k0 = HillSum::kernel(0.0, 0.0, 0.5);
  EXPECT_NEAR(s.bias.hills()[0].amplitude, 0.5, 1e-12);
  EXPECT_NEAR(s.bias.hills()[1].amplitude, 0.5 * std::exp(-0.5 * k0 / 4.0), 1e-12);
}

TEST(MetaDiff, PmfFromBias) {
  HillSum h(0.4, CollectiveVariable::projection(0));
  h.deposit(0.0, 1.0);
  const std::vector<double> grid{-2.0, 0.0, 2.0};
  const auto inf = pmf_from_bias(h, std::numeric_limits<double>::infinity(), grid);
  const double peak = 1.0 / (std::sqrt(2 * std::numbers::pi) * 0.4);
  EXPECT_NEAR(inf.values[1], 0.0, 1e-12);
  EXPECT_NEAR(inf.values[0], peak - h.exact(-2.0).first, 1e-12);
  const auto wt = pmf_from_bias(h, 3.0, grid);
  EXPECT_NEAR(wt.values[0], 1.5 * inf.values[0], 1e-12);
}

TEST(MetaDiff, ValidatesParams) {
  MetaDiffParams p;
  p.gamma = 1.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = {};
  p.rho = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(MetaDiff, RunsAndStops) {
  const auto model = make_double_well(-6.0);
  MetaDiffConfig m;
  m.params.sigma = 1.0;
  m.params.h0 = 12.0;
  m.params.gamma = std::numeric_limits<double>::infinity();
  m.params.rho = 0.4;
  m.params.max_iter = 3;
  m.params.eps_bias.reset();
  m.steering = small_steering(400, 5);
  m.split = barrier_location(model);
  m.n_boot = 0;
  const auto r = run_metadiff(model, NoiseSchedule{}, m);
  ASSERT_EQ(r.checkpoints.size(), 3u);
  EXPECT_FALSE(r.converged);
  EXPECT_EQ(r.stop_reason, "max iterations reached");
  EXPECT_EQ(r.mbar.n_states(), 3u);
  EXPECT_TRUE(std::isnan(r.checkpoints[0].pmf_change));
  EXPECT_TRUE(std::isfinite(r.checkpoints[1].pmf_change));
  EXPECT_GT(r.checkpoints.back().fraction_b, 0.0);
  EXPECT_NEAR(r.checkpoints.back().dg.dg_kbt, -6.0, 1.0);

  m.params.max_iter = 10;
  m.params.eps_bias = 1e6;
  const auto stop = run_metadiff(model, NoiseSchedule{}, m);
  EXPECT_TRUE(stop.converged);
  EXPECT_EQ(stop.checkpoints.size(), 1u);
}

// ---------------------------------------------------------------- dgdiff

TEST(DgDiff, CoreMasses) {
  const std::vector<double> xi{0.1, 0.5, 0.95, 0.6};
  const std::vector<double> w{0.25, 0.25, 0.25, 0.25};
  const auto c = core_masses(xi, w, 0.4);
  EXPECT_DOUBLE_EQ(c.a, 0.25);
  EXPECT_DOUBLE_EQ(c.b, 0.5);
}

TEST(DgDiff, TiltOverlapClosedForms) {
  const std::vector<double> xi{0.0, 1.0};
  const std::vector<double> w{0.5, 0.5};
  const auto same = tilt_overlap(xi, w, 0.0);
  EXPECT_DOUBLE_EQ(same.value, 1.0);
  EXPECT_DOUBLE_EQ(same.raw, 1.0);
  // r = e^{d/2}, e^{-d/2}: mean / max = (1 + e^{-d}) / 2
  const auto t = tilt_overlap(xi, w, 2.0);
  EXPECT_NEAR(t.value, 0.5 * (1.0 + std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(t.raw, std::cosh(1.0), 1e-15);
  // a pure state keeps full overlap under the max normalisation
  const std::vector<double> pure{1.0, 1.0};
  EXPECT_DOUBLE_EQ(tilt_overlap(pure, w, 8.0).value, 1.0);
}

TEST(DgDiff, TiltBiasIsCentered) {
  const auto cv = CollectiveVariable::sigmoid(0, 0.0, 0.2);
  EXPECT_NEAR(tilt_bias(3.0, cv).value(scalar_vec(0.0)), 0.0, 1e-15);
  EXPECT_NEAR(tilt_bias(3.0, cv).value(scalar_vec(50.0)), 1.5, 1e-12);
}

TEST(DgDiff, DefaultConfigLengthScales) {
  const auto c = default_dgdiff_config(make_double_well(0.0));
  const auto& s = std::get<SigmoidProgress>(c.cv.kind());
  EXPECT_NEAR(s.center, 0.0, 1e-8);
  EXPECT_DOUBLE_EQ(s.length_scale, 0.2);
  EXPECT_DOUBLE_EQ(std::get<SigmoidProgress>(c.readout->kind()).length_scale, 0.05);
}

TEST(DgDiff, ValidatesParams) {
  DgDiffParams p;
  p.core = 0.6;
  EXPECT_THROW(p.validate(), ConfigError);
  auto c = default_dgdiff_config(make_double_well(-3.0));
  c.cv = CollectiveVariable::projection(0);
  EXPECT_THROW(run_dgdiff(make_double_well(-3.0), NoiseSchedule{}, c), ConfigError);
}

TEST(DgDiff, LadderEstimate) {
  const auto model = make_double_well(-6.0);
  auto c = default_dgdiff_config(model);
  c.params.n_initial = 100;
  c.params.ess_target = 100;
  c.params.n_boot = 100;
  c.steering.seed = 6;
  const auto r = run_dgdiff(model, NoiseSchedule{}, c);
  ASSERT_GE(r.ladder.size(), 3u);
  for (std::size_t i = 1; i < r.ladder.size(); ++i) EXPECT_GT(r.ladder[i].a, r.ladder[i - 1].a);
  EXPECT_GE(r.ladder.back().core.a, 0.5);
  EXPECT_GE(r.ladder.front().core.b, 0.5);
  for (const auto& t : r.ladder) EXPECT_GE(t.ess, 100.0);
  EXPECT_TRUE(r.gaps.empty());
  const double oracle = -exact_free_energy_difference(
      model, [&](const Vec& x) { return 1.0 - c.readout->value(x); }, std::vector<double>{barrier_location(model)});
  EXPECT_NEAR(r.dg_ab, oracle, 1.0);
  EXPECT_NEAR(r.dg_ab, -r.estimate.dg_kbt, 1e-12);
  EXPECT_GT(r.estimate.standard_error, 0.0);
}

TEST(DgDiff, TiltCapThrows) {
  const auto model = make_double_well(-10.0);
  auto c = default_dgdiff_config(model);
  c.params.max_tilt = 3.0;
  c.params.n_initial = 50;
  EXPECT_THROW(run_dgdiff(model, NoiseSchedule{}, c), NumericalError);
}

// ---------------------------------------------------------------- langevin

TEST(Langevin, StatisticalInefficiency) {
  CounterRng rng(7, 0, 0);
  std::vector<double> iid, ar;
  double x = 0.0;
  for (int i = 0; i < 100000; ++i) {
    iid.push_back(rng.normal());
    x = 0.9 * x + rng.normal();
    ar.push_back(x);
  }
  EXPECT_NEAR(statistical_inefficiency(iid), 1.0, 0.1);
  // (1 + phi) / (1 - phi)
  EXPECT_NEAR(statistical_inefficiency(ar), 19.0, 3.0);
}

TEST(Langevin, StationaryGaussian) {
  Mat cov(1, 1);
  cov(0, 0) = 0.25;
  const auto surface = make_surface(SurfaceKind::kMixture, GaussianMixture({{1.0, scalar_vec(0.0), cov}}));
  LangevinConfig lc;
  lc.n_steps = 400000;
  lc.seed = 8;
  const auto r = langevin_sample(surface, BiasPotential::zero(), scalar_vec(0.0), lc);
  double m1 = 0, m2 = 0;
  for (const auto& p : r.ensemble.particles) {
    m1 += p.x(0);
    m2 += p.x(0) * p.x(0);
  }
  const double n = static_cast<double>(r.ensemble.size());
  m1 /= n;
  m2 /= n;
  EXPECT_NEAR(m1, 0.0, 0.03);
  EXPECT_NEAR(m2 - m1 * m1, 0.25, 0.02);
  EXPECT_EQ(r.ensemble.size(), 36000u);
}

TEST(Langevin, DivergenceRaises) {
  const auto surface = make_surface(SurfaceKind::kTwoState);
  LangevinConfig lc;
  lc.dt = 2.0;
  lc.n_steps = 1000;
  EXPECT_THROW(langevin_sample(surface, BiasPotential::harmonic(0.0, 50.0), make_vec({0.0, 0.0}), lc), NumericalError);
  lc = {};
  lc.equilibration = 1.0;
  EXPECT_THROW(lc.validate(), ConfigError);
}

TEST(Langevin, UmbrellaBaselineShapes) {
  BaselineConfig b;
  b.windows = design_windows(-2.0, 2.0, 4);
  b.langevin.n_steps = 20000;
  b.langevin.seed = 9;
  const auto r = run_langevin_umbrella(make_surface(SurfaceKind::kTwoState), b);
  ASSERT_EQ(r.ensembles.size(), 4u);
  ASSERT_EQ(r.inefficiency.size(), 4u);
  for (double g : r.inefficiency) EXPECT_GE(g, 1.0);
  EXPECT_EQ(r.pmf.size(), kDefaultHistogramBins);
  EXPECT_TRUE(r.mbar.converged);
}

// ---------------------------------------------------------------- study

TEST(Study, ParseMethods) {
  EXPECT_EQ(parse_study_method("dgdiff"), StudyMethod::kDgDiff);
  EXPECT_EQ(to_string(StudyMethod::kSteeredTilt), "steered-tilt");
  EXPECT_THROW(parse_study_method("mcmc"), ConfigError);
}

TEST(Study, FailureRateAgainstBinomial) {
  // independent fair coins, one per batch
  std::vector<std::vector<double>> m;
  CounterRng rng(10, 0, 0);
  for (int b = 0; b < 4000; ++b) m.push_back({rng.uniform() < 0.5 ? 1.0 : 0.0});
  const auto rows = failure_rate(m, {1, 3}, 2000, 11);
  EXPECT_NEAR(rows[0].rate, 0.5, 4 * rows[0].standard_error);
  EXPECT_NEAR(rows[1].rate, 0.125, 4 * std::sqrt(0.125 * 0.875 / 2000));
  const auto either = failure_rate(m, {3}, 2000, 11, true);
  EXPECT_NEAR(either[0].rate, 0.25, 4 * std::sqrt(0.25 * 0.75 / 2000));
}

TEST(Study, FailureRateEdgeCases) {
  const std::vector<std::vector<double>> m{{1.0, 1.0}, {0.0, 1.0}};
  EXPECT_THROW(failure_rate({{1.0}}, {1}), ConfigError);
  EXPECT_THROW(failure_rate(m, {5}), ConfigError);
  const auto whole = failure_rate(m, {4}, 200);
  EXPECT_EQ(whole[0].repeats, 1u);
  EXPECT_EQ(whole[0].failures, 0u);
}

TEST(Study, ConvergenceRows) {
  StudyConfig cfg;
  cfg.grid = {10, 2000};
  cfg.repeats = 3;
  cfg.seed = 12;
  const auto r = study_convergence(-1.0, StudyMethod::kUnbiased, cfg);
  ASSERT_EQ(r.rows.size(), 2u);
  ASSERT_EQ(r.repeats.size(), 6u);
  EXPECT_TRUE(r.rows[1].converged);
  ASSERT_TRUE(r.minimal_n.has_value());
  EXPECT_LE(*r.minimal_n, 2000u);
  EXPECT_NEAR(r.delta_g, -1.0, 1e-9);
  EXPECT_NEAR(r.rows[1].sd_kcal, r.rows[1].sd * kKcalPerKbt300, 1e-12);
  EXPECT_DOUBLE_EQ(r.rows[1].mean_total_samples, 2000.0);
  cfg.repeats = 1;
  EXPECT_THROW(study_convergence(-1.0, StudyMethod::kUnbiased, cfg), ConfigError);
}

TEST(Study, EmptyBasinCountsAsFailure) {
  StudyConfig cfg;
  cfg.grid = {10};
  cfg.repeats = 5;
  const auto r = study_convergence(-14.0, StudyMethod::kUnbiased, cfg);
  EXPECT_EQ(r.rows[0].failed, 5u);
  EXPECT_FALSE(r.rows[0].converged);
  EXPECT_FALSE(r.minimal_n.has_value());
  for (const auto& rep : r.repeats) EXPECT_TRUE(std::isnan(rep.estimate));
}
