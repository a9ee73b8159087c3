#include "eds/eds.hpp"

#include <gtest/gtest.h>

using namespace eds;

namespace {

// iid draws from N(mu, 1), unit weights
WeightedEnsemble gaussian_draws(double mu, std::size_t n, std::uint64_t seed, int window) {
  WeightedEnsemble e;
  e.window_index = window;
  CounterRng rng(seed, 0, 0);
  for (std::size_t i = 0; i < n; ++i) {
    e.particles.push_back({scalar_vec(mu + rng.normal()), 0.0, static_cast<std::int64_t>(i), -1});
  }
  return e;
}

struct Tilted {
  std::vector<WeightedEnsemble> ens;
  std::vector<BiasPotential> biases;
};

// states q_k ~ N(0,1) e^{-a_k x} = N(-a_k, 1), f_k - f_0 = -(a_k^2 - a_0^2) / 2
Tilted tilted(const std::vector<double>& slopes, std::size_t n, std::uint64_t seed) {
  Tilted t;
  for (std::size_t k = 0; k < slopes.size(); ++k) {
    t.ens.push_back(gaussian_draws(-slopes[k], n, derive_seed(seed, 1, k), static_cast<int>(k)));
    t.biases.push_back(BiasPotential::linear_tilt(slopes[k]));
  }
  return t;
}

}  // namespace

TEST(Mbar, PoolRejectsMismatch) {
  const auto t = tilted({0.0, 1.0}, 10, 1);
  const std::vector<BiasPotential> one{t.biases[0]};
  EXPECT_THROW(pool(t.ens, one), std::invalid_argument);
  const auto p = pool(t.ens, t.biases);
  EXPECT_EQ(p.size(), 20u);
  EXPECT_EQ(p.bias.cols(), 2);
  EXPECT_DOUBLE_EQ(p.bias(15, 1), p.x[15](0));
  MbarOptions o;
  o.masses = std::vector<double>{1.0};
  EXPECT_THROW(mbar_solve(t.ens, t.biases, o), std::invalid_argument);
}

TEST(Mbar, TiltedGaussiansMatchClosedForm) {
  const std::vector<double> a{0.0, 0.8, 1.6};
  const auto t = tilted(a, 4000, 2);
  const auto r = mbar_solve(t.ens, t.biases);
  ASSERT_TRUE(r.converged);
  const auto se = free_energy_errors(asymptotic_covariance(r));
  for (std::size_t k = 1; k < a.size(); ++k) {
    const double exact = -0.5 * a[k] * a[k];
    EXPECT_NEAR(r.f(static_cast<Eigen::Index>(k)), exact, 4.0 * se[k]) << "state " << k;
  }
}

TEST(Mbar, AsymptoticAndBootstrapErrorsAgree) {
  const auto t = tilted({0.0, 1.0}, 2000, 3);
  const auto r = mbar_solve(t.ens, t.biases);
  const double asym = free_energy_errors(asymptotic_covariance(r))[1];
  const auto reps = mbar_bootstrap(r, 200, 4, [](const MbarResult& m) { return std::vector<double>{m.f(1)}; });
  std::vector<double> f1;
  for (const auto& row : reps) f1.push_back(row[0]);
  const double boot = sample_sd(f1);
  EXPECT_GT(boot, 0.6 * asym);
  EXPECT_LT(boot, 1.6 * asym);
}

TEST(Mbar, SingleStateIsDirectReweighting) {
  const auto t = tilted({1.3}, 500, 5);
  const auto r = mbar_solve(t.ens, t.biases);
  const auto w = target_weights(r, 0);
  const auto d = direct_reweight(t.ens[0], t.biases[0]);
  for (std::size_t i = 0; i < w.size(); ++i) EXPECT_NEAR(w[i], d[i], 1e-12);
  // the sampled state itself gets the steering weights back
  const auto own = target_weights(r, 1);
  for (double v : own) EXPECT_NEAR(v, 1.0 / 500.0, 1e-12);
}

TEST(Mbar, TwoStatesMatchBar) {
  const auto t = tilted({0.0, 0.9}, 800, 6);
  MbarOptions o;
  o.tolerance = 1e-13;
  const auto r = mbar_solve(t.ens, t.biases, o);
  EXPECT_NEAR(r.f(1), bar(r), 1e-8);
}

TEST(Mbar, SelfConsistencyAndOverlapRows) {
  const auto t = tilted({0.0, 0.5, 1.0, 1.5}, 300, 7);
  const auto r = mbar_solve(t.ens, t.biases);
  EXPECT_LT(self_consistency_residual(r), 1e-9);
  const auto ov = overlap_matrix(r);
  for (Eigen::Index i = 0; i < ov.matrix.rows(); ++i) EXPECT_NEAR(ov.matrix.row(i).sum(), 1.0, 1e-8);
  EXPECT_TRUE(ov.connected);
}

TEST(Mbar, DetectsDisconnectedStates) {
  std::vector<WeightedEnsemble> ens{gaussian_draws(-3.0, 200, 8, 0), gaussian_draws(3.0, 200, 9, 1)};
  std::vector<BiasPotential> b{BiasPotential::harmonic(-3.0, 400.0), BiasPotential::harmonic(3.0, 400.0)};
  // draws are wide compared to the windows, but the windows themselves do not overlap
  for (auto& e : ens) {
    for (auto& p : e.particles) p.x(0) = (p.x(0) - (e.window_index ? 3.0 : -3.0)) * 0.05 + (e.window_index ? 3.0 : -3.0);
  }
  const auto r = mbar_solve(ens, b);
  EXPECT_FALSE(overlap_matrix(r).connected);
}

TEST(Mbar, ClusterIndexGroupsByWindowAndTrajectory) {
  auto a = gaussian_draws(0.0, 4, 10, 0);
  auto c = gaussian_draws(0.0, 4, 11, 1);
  a.particles[1].trajectory_id = 0;
  const std::vector<WeightedEnsemble> ens{a, c};
  const std::vector<BiasPotential> b{BiasPotential::zero(), BiasPotential::zero()};
  const auto p = pool(ens, b);
  const auto id = cluster_index(p);
  EXPECT_EQ(id[0], id[1]);
  EXPECT_NE(id[0], id[4]);  // same trajectory id, other window
  EXPECT_EQ(*std::max_element(id.begin(), id.end()), 6u);
}

TEST(Mbar, MassOverrideChangesWeighting) {
  const auto t = tilted({0.0, 1.0}, 400, 12);
  MbarOptions o;
  o.masses = std::vector<double>{100.0, 400.0};
  const auto r = mbar_solve(t.ens, t.biases, o);
  EXPECT_DOUBLE_EQ(r.masses.masses[0], 100.0);
  EXPECT_NEAR(r.f(1), -0.5, 0.15);
}
