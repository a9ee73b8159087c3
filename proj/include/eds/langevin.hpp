#pragma once

#include "eds/bias.hpp"
#include "eds/collective_variable.hpp"
#include "eds/ensemble.hpp"
#include "eds/estimators.hpp"
#include "eds/mbar.hpp"
#include "eds/pmf.hpp"
#include "eds/rng.hpp"
#include "eds/surfaces.hpp"
#include "eds/umbrella.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace eds {

enum class LangevinInit { kWindowCenter, kPreviousTerminal };

struct LangevinConfig {
  double dt = 1e-3;
  std::size_t n_steps = 100000;
  double equilibration = 0.1;  // fraction of steps discarded
  std::size_t stride = 10;
  LangevinInit init = LangevinInit::kPreviousTerminal;
  std::uint64_t seed = 0;
  double divergence = 1e6;

  void validate() const {
    if (!(dt > 0.0)) throw ConfigError("langevin: dt must be > 0");
    if (n_steps < 1) throw ConfigError("langevin: n_steps must be >= 1");
    if (!(equilibration >= 0.0 && equilibration < 1.0)) throw ConfigError("langevin: equilibration must lie in [0, 1)");
    if (stride < 1) throw ConfigError("langevin: stride must be >= 1");
  }
};

struct LangevinRun {
  WeightedEnsemble ensemble;  // unit weights, one trajectory
  Vec terminal;
  double inefficiency = 1.0;  // statistical inefficiency g of the CV series
};

/// Statistical inefficiency g = 1 + 2 sum_t rho_t with Sokal's automatic
/// window (stop at the first M with M >= 5 tau).
inline double statistical_inefficiency(std::span<const double> series) {
  const std::size_t n = series.size();
  if (n < 3) return 1.0;
  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);
  double c0 = 0.0;
  for (double v : series) c0 += (v - mean) * (v - mean);
  c0 /= static_cast<double>(n);
  if (!(c0 > 0.0)) return 1.0;
  double tau = 1.0;
  for (std::size_t lag = 1; lag < n; ++lag) {
    double c = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) c += (series[i] - mean) * (series[i + lag] - mean);
    c /= static_cast<double>(n) * c0;
    tau += 2.0 * c;
    if (static_cast<double>(lag) >= 5.0 * tau) break;
  }
  return std::max(tau, 1.0);
}

/// Overdamped Euler-Maruyama on u + b from x0:
/// x <- x - grad(u + b) dt + sqrt(2 dt) z.
inline LangevinRun langevin_sample(const PotentialSurface& surface, const BiasPotential& bias, const Vec& x0,
                                   const LangevinConfig& cfg, int window_index = 0,
                                   const CollectiveVariable& cv = {}) {
  cfg.validate();
  const auto burn = static_cast<std::size_t>(cfg.equilibration * static_cast<double>(cfg.n_steps));
  const double noise = std::sqrt(2.0 * cfg.dt);
  CounterRng rng(cfg.seed, static_cast<std::uint64_t>(window_index), 0);
  LangevinRun run;
  run.ensemble.window_index = window_index;
  Vec x = x0;
  std::vector<double> series;
  for (std::size_t k = 0; k < cfg.n_steps; ++k) {
    const Vec g = surface.gradient(x) + bias.eval(x).gradient;
    for (Eigen::Index d = 0; d < x.size(); ++d) x(d) += -g(d) * cfg.dt + noise * rng.normal();
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > cfg.divergence) {
      throw NumericalError("langevin: trajectory diverged at step " + std::to_string(k));
    }
    if (k >= burn && (k - burn) % cfg.stride == 0) {
      run.ensemble.particles.push_back({x, 0.0, 0, -1});
      series.push_back(cv.value(x));
    }
  }
  run.terminal = x;
  run.ensemble.terminal_ess = static_cast<double>(run.ensemble.size());
  run.inefficiency = statistical_inefficiency(series);
  return run;
}

struct BaselineConfig {
  CollectiveVariable cv;
  std::vector<UmbrellaWindow> windows;
  LangevinConfig langevin;
  /// Starting point of the first window; the CV axis is overwritten with the
  /// window centre. Defaults to the mean of mixture component 0.
  std::optional<Vec> start;
  std::optional<std::vector<double>> pmf_edges;
  std::size_t pmf_bins = kDefaultHistogramBins;
  MbarOptions mbar;
};

struct BaselineResult {
  std::vector<UmbrellaWindow> windows;
  std::vector<WeightedEnsemble> ensembles;
  std::vector<double> inefficiency;  // g per window
  MbarResult mbar;
  PmfEstimate pmf;
};

/// Umbrella sampling with Langevin dynamics; windows run in order and, by
/// default, each starts from the previous window's last state.
inline BaselineResult run_langevin_umbrella(const PotentialSurface& surface, const BaselineConfig& cfg) {
  if (cfg.windows.empty()) throw ConfigError("baseline: no windows");
  const int axis = cfg.cv.axis();
  Vec x = cfg.start ? *cfg.start : surface.mixture.components()[0].mean;
  if (axis >= x.size()) throw ConfigError("baseline: CV axis outside the surface dimension");
  BaselineResult res;
  res.windows = cfg.windows;
  std::vector<BiasPotential> biases;
  std::vector<double> masses;
  for (std::size_t k = 0; k < cfg.windows.size(); ++k) {
    const auto& w = cfg.windows[k];
    Vec x0 = x;
    if (k == 0 || cfg.langevin.init == LangevinInit::kWindowCenter) {
      x0 = cfg.start ? *cfg.start : surface.mixture.components()[0].mean;
      x0(axis) = w.center;
    }
    LangevinConfig lc = cfg.langevin;
    if (w.n_samples > 0) lc.n_steps = w.n_samples;
    const BiasPotential b = w.bias(cfg.cv);
    auto run = langevin_sample(surface, b, x0, lc, static_cast<int>(k), cfg.cv);
    x = run.terminal;
    masses.push_back(static_cast<double>(run.ensemble.size()) / run.inefficiency);
    res.inefficiency.push_back(run.inefficiency);
    res.ensembles.push_back(std::move(run.ensemble));
    biases.push_back(b);
  }
  MbarOptions mo = cfg.mbar;
  if (!mo.masses) mo.masses = masses;
  res.mbar = mbar_solve(res.ensembles, biases, mo);
  PmfOptions po;
  po.edges = cfg.pmf_edges ? *cfg.pmf_edges
                           : uniform_edges(cfg.windows.front().center, cfg.windows.back().center, cfg.pmf_bins);
  po.n_boot = 0;
  res.pmf = pmf_estimate(mbar_samples(res.mbar), cfg.cv, po);
  return res;
}

}  // namespace eds
