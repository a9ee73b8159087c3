#pragma once

#include "eds/bias.hpp"
#include "eds/collective_variable.hpp"
#include "eds/ensemble.hpp"
#include "eds/estimators.hpp"
#include "eds/gaussian_mixture.hpp"
#include "eds/mbar.hpp"
#include "eds/noise_schedule.hpp"
#include "eds/pmf.hpp"
#include "eds/steering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace eds {

struct MetaDiffParams {
  double sigma = 0.3;  // hill width in xi
  /// Tempering factor; +inf gives the standard (untempered) rule.
  double gamma = 10.0;
  double h0 = 0.5;   // total mass deposited per iteration (k_BT)
  double rho = 1.0;  // h_k = h0 rho^k
  std::optional<double> eps_bias = 0.05;
  std::optional<double> eps_pmf;
  std::size_t max_iter = 10;
  std::size_t grid_points = 512;
  /// Range of the Hermite table used to evaluate the frozen bias.
  double table_lo = -8.0;
  double table_hi = 8.0;

  void validate() const {
    if (!(sigma > 0.0)) throw ConfigError("metadiff: sigma must be > 0");
    if (!(gamma > 1.0)) throw ConfigError("metadiff: gamma must be > 1");
    if (!(h0 > 0.0)) throw ConfigError("metadiff: h0 must be > 0");
    if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("metadiff: rho must lie in (0, 1]");
    if (max_iter < 1) throw ConfigError("metadiff: max_iter must be >= 1");
    if (grid_points < 2) throw ConfigError("metadiff: grid_points must be >= 2");
    if (!(table_hi > table_lo)) throw ConfigError("metadiff: table range is empty");
  }
};

struct DepositRecord {
  std::size_t iteration = 0;  // 1-based
  double center = 0.0;
  double amplitude = 0.0;
  double mass = 0.0;
};

struct MetaDiffState {
  HillSum bias;
  std::size_t iteration = 0;  // completed iterations
  std::vector<DepositRecord> deposits;
  std::vector<WeightedEnsemble> checkpoints;  // ensemble sampled under b_{k-1}
  std::vector<BiasPotential> frozen;          // b_{k-1} per checkpoint

  MetaDiffState() = default;
  MetaDiffState(double sigma, CollectiveVariable cv) : bias(sigma, std::move(cv)) {}
};

/// Appends one hill per sample, sequentially. Masses are h_k w_i / sum w;
/// amplitudes are the masses times exp(-b(xi_i) / (gamma - 1)) where b
/// includes every earlier hill, those of this batch too.
inline void deposit_batch(MetaDiffState& state, const WeightedEnsemble& ensemble, const MetaDiffParams& params) {
  params.validate();
  const double h = params.h0 * std::pow(params.rho, static_cast<double>(state.iteration));
  const auto w = ensemble.normalized_weights();
  const bool tempered = std::isfinite(params.gamma);
  const HillSum before = state.bias;
  const std::size_t first_new = state.bias.size();
  const std::size_t iter = state.iteration + 1;
  for (std::size_t i = 0; i < ensemble.size(); ++i) {
    const double mass = h * w[i];
    if (mass == 0.0) continue;
    const double xi = state.bias.cv().value(ensemble.particles[i].x);
    double amp = mass;
    if (tempered) {
      double b = before.in_cv(xi).first;
      const auto& hills = state.bias.hills();
      for (std::size_t m = first_new; m < hills.size(); ++m) {
        b += hills[m].amplitude * HillSum::kernel(xi, hills[m].center, state.bias.width());
      }
      amp = mass * std::exp(-b / (params.gamma - 1.0));
    }
    state.bias.deposit(xi, amp);
    state.deposits.push_back({iter, xi, amp, mass});
  }
  state.iteration = iter;
}

/// -(gamma / (gamma - 1)) b(xi) on a grid, min-shifted; gamma = inf gives -b.
inline PmfEstimate pmf_from_bias(const HillSum& bias, double gamma, const std::vector<double>& grid) {
  const double factor = std::isfinite(gamma) ? gamma / (gamma - 1.0) : 1.0;
  PmfEstimate p;
  p.kind = PmfKind::kBias;
  p.centers = grid;
  for (double g : grid) p.values.push_back(-factor * bias.exact(g).first);
  p.standard_errors.assign(grid.size(), std::numeric_limits<double>::quiet_NaN());
  shift_to_zero_min(p.values);
  return p;
}

struct MetaCheckpoint {
  std::size_t iteration = 0;
  double bias_change = 0.0;      // oscillation of b_k - b_{k-1} on the grid
  double pmf_change = std::numeric_limits<double>::quiet_NaN();
  double fraction_b = 0.0;       // share of the batch on the far side of `split`
  PmfEstimate pmf;               // MBAR over checkpoints 1..k
  DgEstimate dg;                 // MBAR over checkpoints 1..k
  double batch_ess = 0.0;        // steering ESS before terminal resampling
};

struct MetaDiffConfig {
  CollectiveVariable cv;
  MetaDiffParams params;
  SteeringConfig steering;  // n_particles is the batch size
  Interpolation interpolation = Interpolation::kLinear;
  /// xi threshold separating basin A (below) from basin B.
  double split = 0.0;
  std::optional<std::vector<double>> pmf_edges;
  std::size_t n_boot = 200;
};

struct MetaDiffResult {
  MetaDiffState state;
  std::vector<MetaCheckpoint> checkpoints;
  MbarResult mbar;
  bool converged = false;
  std::string stop_reason;
  std::vector<double> grid;
  std::vector<std::string> warnings;
};

namespace detail {

inline constexpr std::uint64_t kMetaTag = 0x3e7ad1ffULL;

/// Max minus min of a - b over the grid (insensitive to constant shifts).
inline double oscillation(const HillSum& a, const HillSum& b, const std::vector<double>& grid) {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double g : grid) {
    const double d = a.exact(g).first - b.exact(g).first;
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  return hi - lo;
}

}  // namespace detail

/// Batchwise metadynamics: steer under the frozen bias, deposit, repeat until
/// the bias change (or the checkpoint PMF change) drops below threshold.
inline MetaDiffResult run_metadiff(const GaussianMixture& model, const NoiseSchedule& schedule,
                                   const MetaDiffConfig& cfg) {
  cfg.params.validate();
  const auto& prm = cfg.params;
  MetaDiffResult res;
  res.state = MetaDiffState(prm.sigma, cfg.cv);
  double obs_lo = std::numeric_limits<double>::infinity();
  double obs_hi = -obs_lo;
  std::optional<PmfEstimate> prev_pmf;

  for (std::size_t k = 0; k < prm.max_iter; ++k) {
    const HillSum frozen = res.state.bias.tabulated(prm.table_lo, prm.table_hi);
    SteeringConfig sc = cfg.steering;
    sc.seed = derive_seed(cfg.steering.seed, detail::kMetaTag, k);
    sc.window_index = static_cast<int>(k);
    sc.terminal_resample = true;
    WeightedEnsemble e = steer(model, schedule, BiasSchedule(BiasPotential(frozen), cfg.interpolation), sc);
    for (const auto& w : e.warnings) res.warnings.push_back("iteration " + std::to_string(k + 1) + ": " + w);

    MetaCheckpoint cp;
    cp.iteration = k + 1;
    cp.batch_ess = e.terminal_ess;
    std::size_t n_b = 0;
    for (const auto& p : e.particles) {
      const double xi = cfg.cv.value(p.x);
      obs_lo = std::min(obs_lo, xi);
      obs_hi = std::max(obs_hi, xi);
      n_b += xi > cfg.split;
    }
    cp.fraction_b = static_cast<double>(n_b) / static_cast<double>(e.size());

    res.state.checkpoints.push_back(e);
    res.state.frozen.emplace_back(frozen);
    const HillSum previous = res.state.bias;
    deposit_batch(res.state, e, prm);

    res.grid = uniform_edges(obs_lo, obs_hi, prm.grid_points - 1);
    cp.bias_change = detail::oscillation(res.state.bias, previous, res.grid);

    res.mbar = mbar_solve(res.state.checkpoints, res.state.frozen);
    const WeightedSamples ws = mbar_samples(res.mbar);
    PmfOptions po;
    po.edges = cfg.pmf_edges ? *cfg.pmf_edges : uniform_edges(prm.table_lo, prm.table_hi, kDefaultHistogramBins);
    po.n_boot = cfg.n_boot;
    po.seed = cfg.steering.seed + k;
    cp.pmf = pmf_estimate(ws, cfg.cv, po);
    const double split = cfg.split;
    const CollectiveVariable cv = cfg.cv;
    cp.dg = dg_from_membership(
        ws, [&](const Vec& x) { return cv.value(x) < split ? 1.0 : 0.0; }, cfg.n_boot, cfg.steering.seed + k);
    if (prev_pmf) cp.pmf_change = compare_pmf(cp.pmf.values, prev_pmf->values).max_error;
    prev_pmf = cp.pmf;
    res.checkpoints.push_back(cp);

    if (prm.eps_bias && cp.bias_change < *prm.eps_bias) {
      res.converged = true;
      res.stop_reason = "bias change below threshold";
      break;
    }
    if (prm.eps_pmf && std::isfinite(cp.pmf_change) && cp.pmf_change < *prm.eps_pmf) {
      res.converged = true;
      res.stop_reason = "checkpoint PMF change below threshold";
      break;
    }
  }
  if (!res.converged) {
    res.stop_reason = "max iterations reached";
    res.warnings.push_back("metadiff: not converged after " + std::to_string(prm.max_iter) + " iterations");
  }
  for (const auto& w : res.mbar.warnings) res.warnings.push_back(w);
  return res;
}

}  // namespace eds
