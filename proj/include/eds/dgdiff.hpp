#pragma once

#include "eds/bias.hpp"
#include "eds/collective_variable.hpp"
#include "eds/ensemble.hpp"
#include "eds/estimators.hpp"
#include "eds/gaussian_mixture.hpp"
#include "eds/mbar.hpp"
#include "eds/noise_schedule.hpp"
#include "eds/steering.hpp"
#include "eds/surfaces.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace eds {

struct CoreMasses {
  double a = 0.0;  // weighted mass of xi in [0, c]
  double b = 0.0;  // weighted mass of xi in [1 - c, 1]
};

inline CoreMasses core_masses(std::span<const double> xi, std::span<const double> normalized_weights,
                              double c = 0.4) {
  CoreMasses m;
  for (std::size_t i = 0; i < xi.size(); ++i) {
    if (xi[i] <= c) m.a += normalized_weights[i];
    if (xi[i] >= 1.0 - c) m.b += normalized_weights[i];
  }
  return m;
}

inline CoreMasses core_masses(const WeightedEnsemble& e, const CollectiveVariable& cv, double c = 0.4) {
  std::vector<double> xi;
  for (const auto& p : e.particles) xi.push_back(cv.value(p.x));
  return core_masses(xi, e.normalized_weights(), c);
}

struct TiltOverlap {
  double value = 0.0;  // mean(r) / max(r), in (0, 1]
  double raw = 0.0;    // mean(r)
};

/// Overlap from samples of tilt a towards tilt a' = a + delta with ratios
/// r_i = exp(-delta (xi_i - 1/2)), normalised by the largest ratio in the
/// batch. Uses the normalised sample weights.
inline TiltOverlap tilt_overlap(std::span<const double> xi, std::span<const double> normalized_weights,
                                double delta) {
  double max_log = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < xi.size(); ++i) {
    if (normalized_weights[i] > 0.0) max_log = std::max(max_log, -delta * (xi[i] - 0.5));
  }
  double mean_scaled = 0.0;
  for (std::size_t i = 0; i < xi.size(); ++i) {
    mean_scaled += normalized_weights[i] * std::exp(-delta * (xi[i] - 0.5) - max_log);
  }
  return {mean_scaled, mean_scaled * std::exp(max_log)};
}

struct DgDiffParams {
  double step = 2.0;             // s
  std::size_t n_initial = 100;   // n
  double dominance = 0.5;        // theta
  double overlap = 0.25;         // eps_ov
  double ess_target = 100.0;
  double core = 0.4;             // c
  double max_tilt = 40.0;
  std::size_t max_depth = 4;     // midpoint insertions per original pair
  std::size_t n_boot = kDefaultBootstrap;

  void validate() const {
    if (!(step > 0.0)) throw ConfigError("dgdiff: step must be > 0");
    if (n_initial < 2) throw ConfigError("dgdiff: n_initial must be >= 2");
    if (!(dominance > 0.0 && dominance <= 1.0)) throw ConfigError("dgdiff: dominance must lie in (0, 1]");
    if (!(overlap > 0.0 && overlap <= 1.0)) throw ConfigError("dgdiff: overlap must lie in (0, 1]");
    if (!(core > 0.0 && core < 0.5)) throw ConfigError("dgdiff: core cutoff must lie in (0, 0.5)");
    if (!(max_tilt > 0.0)) throw ConfigError("dgdiff: max_tilt must be > 0");
  }
};

struct TiltEntry {
  double a = 0.0;
  WeightedEnsemble ensemble;  // all batches at this tilt
  std::size_t batches = 0;
  double ess = 0.0;           // sum of pre-terminal-resample batch ESS
  CoreMasses core;
  double overlap_left = std::numeric_limits<double>::quiet_NaN();   // O_{a -> left neighbour}
  double overlap_right = std::numeric_limits<double>::quiet_NaN();  // O_{a -> right neighbour}
  double overlap_left_raw = std::numeric_limits<double>::quiet_NaN();
  double overlap_right_raw = std::numeric_limits<double>::quiet_NaN();
  std::size_t depth = 0;      // bisection depth at insertion
  bool flagged = false;
};

struct DgDiffResult {
  std::vector<TiltEntry> ladder;  // sorted by a
  MbarResult mbar;
  double dg_ab = 0.0;             // -log(sum W xi / sum W (1 - xi))
  DgEstimate estimate;            // bootstrap of dg_ab, with kcal/mol
  std::size_t total_samples = 0;
  std::vector<std::string> warnings;
  std::vector<std::pair<double, double>> gaps;  // neighbour pairs left without overlap
};

/// Tilt bias b_a = a (xi - 1/2).
inline BiasPotential tilt_bias(double a, const CollectiveVariable& cv) {
  return BiasPotential::linear_tilt(a, cv, true);
}

namespace detail {

inline constexpr std::uint64_t kDgTag = 0xd6d1ffULL;

struct DgDiffRunner {
  const GaussianMixture& model;
  const NoiseSchedule& schedule;
  const CollectiveVariable& cv;
  const DgDiffParams& prm;
  const SteeringConfig& base;
  Interpolation interp;
  std::map<double, TiltEntry> tilts;
  std::vector<std::string> warnings;
  std::uint64_t batch_counter = 0;

  WeightedEnsemble sample_once(double a, std::size_t n) {
    SteeringConfig sc = base;
    sc.n_particles = n;
    sc.terminal_resample = true;
    sc.seed = derive_seed(base.seed, kDgTag, batch_counter++);
    return steer(model, schedule, BiasSchedule(tilt_bias(a, cv), interp), sc);
  }

  /// One batch with the retry policy: a failed batch (numerical error or
  /// ESS < 2) is redrawn once with twice the particles, then flagged.
  std::pair<WeightedEnsemble, bool> sample(double a, std::size_t n) {
    for (int attempt = 0; attempt < 2; ++attempt) {
      const std::size_t m = attempt == 0 ? n : 2 * n;
      try {
        auto e = sample_once(a, m);
        if (e.terminal_ess >= 2.0) return {std::move(e), true};
        if (attempt == 1) {
          warnings.push_back("tilt " + std::to_string(a) + ": ESS below 2 after retry");
          return {std::move(e), false};
        }
      } catch (const NumericalError& err) {
        if (attempt == 1) throw;
      }
    }
    throw NumericalError("dgdiff: unreachable");
  }

  void add_batch(double a, std::size_t n, std::size_t depth = 0) {
    auto [e, ok] = sample(a, n);
    auto it = tilts.find(a);
    if (it == tilts.end()) {
      TiltEntry t;
      t.a = a;
      t.depth = depth;
      it = tilts.emplace(a, std::move(t)).first;
    }
    TiltEntry& t = it->second;
    // Later batches get trajectory ids past the existing ones so clusters stay distinct.
    std::int64_t offset = 0;
    for (const auto& p : t.ensemble.particles) offset = std::max(offset, p.trajectory_id + 1);
    for (auto& p : e.particles) {
      p.trajectory_id += offset;
      if (p.ancestor_id >= 0) p.ancestor_id += offset;
      t.ensemble.particles.push_back(p);
    }
    for (const auto& w : e.warnings) warnings.push_back("tilt " + std::to_string(a) + ": " + w);
    t.ensemble.t = e.t;
    t.ess += e.terminal_ess;
    ++t.batches;
    t.flagged = t.flagged || !ok;
    t.core = core_masses(t.ensemble, cv, prm.core);
  }

  TiltOverlap overlap(const TiltEntry& from, double to) const {
    std::vector<double> xi;
    for (const auto& p : from.ensemble.particles) xi.push_back(cv.value(p.x));
    return tilt_overlap(xi, from.ensemble.normalized_weights(), to - from.a);
  }

  void check_tilt(double a) const {
    if (std::abs(a) > prm.max_tilt) {
      throw NumericalError("dgdiff: tilt magnitude exceeded " + std::to_string(prm.max_tilt) +
                           " k_BT without both states dominating; the CV is likely degenerate");
    }
  }
};

}  // namespace detail

struct DgDiffConfig {
  CollectiveVariable cv;  // progress coordinate in (0, 1), used by the tilts
  /// Sharper progress coordinate for the final A/B read-out; defaults to cv.
  std::optional<CollectiveVariable> readout;
  DgDiffParams params;
  SteeringConfig steering;
  Interpolation interpolation = Interpolation::kLinear;
};

/// Tilt CV with length scale separation/10 and a read-out CV with
/// separation/40, both centred on the barrier between components 0 and 1.
inline DgDiffConfig default_dgdiff_config(const GaussianMixture& model, int axis = 0) {
  const auto comps = model.components();
  if (comps.size() < 2) throw ConfigError("dgdiff: the model needs two components");
  const double sep = std::abs(comps[1].mean(axis) - comps[0].mean(axis));
  const double x0 = barrier_location(model, axis);
  DgDiffConfig c;
  c.cv = CollectiveVariable::sigmoid(axis, x0, sep / 10.0);
  c.readout = CollectiveVariable::sigmoid(axis, x0, sep / 40.0);
  return c;
}

/// The four phases: grow the ladder until both ends dominate, bisect
/// neighbours lacking overlap, top up every tilt to ESS_target, then MBAR.
inline DgDiffResult run_dgdiff(const GaussianMixture& model, const NoiseSchedule& schedule, const DgDiffConfig& cfg) {
  const auto& prm = cfg.params;
  prm.validate();
  if (cfg.cv.is_projection()) throw ConfigError("dgdiff: the CV must be a sigmoid progress coordinate");
  detail::DgDiffRunner run{model, schedule, cfg.cv, prm, cfg.steering, cfg.interpolation, {}, {}, 0};

  // Phase 1-2: increase tilts.
  run.add_batch(0.0, prm.n_initial);
  double a_left = 0.0;
  double a_right = 0.0;
  while (true) {
    const bool need_right = run.tilts.at(a_right).core.a < prm.dominance;
    const bool need_left = run.tilts.at(a_left).core.b < prm.dominance;
    if (!need_right && !need_left) break;
    if (need_right) {
      a_right += prm.step;
      run.check_tilt(a_right);
      run.add_batch(a_right, prm.n_initial);
    }
    if (need_left) {
      a_left -= prm.step;
      run.check_tilt(a_left);
      run.add_batch(a_left, prm.n_initial);
    }
  }

  // Phase 3: adjacent overlap by midpoint insertion.
  DgDiffResult res;
  std::vector<std::pair<double, double>> flagged_gaps;
  bool changed = true;
  while (changed) {
    changed = false;
    std::vector<double> as;
    for (const auto& [a, t] : run.tilts) as.push_back(a);
    for (std::size_t i = 0; i + 1 < as.size(); ++i) {
      const auto& lo = run.tilts.at(as[i]);
      const auto& hi = run.tilts.at(as[i + 1]);
      const double up = run.overlap(lo, hi.a).value;
      const double down = run.overlap(hi, lo.a).value;
      if (up >= prm.overlap && down >= prm.overlap) continue;
      const std::size_t depth = std::max(lo.depth, hi.depth) + 1;
      if (depth > prm.max_depth) {
        const auto gap = std::make_pair(lo.a, hi.a);
        if (std::find(flagged_gaps.begin(), flagged_gaps.end(), gap) == flagged_gaps.end()) {
          flagged_gaps.push_back(gap);
          run.warnings.push_back("overlap gap between tilts " + std::to_string(lo.a) + " and " +
                                 std::to_string(hi.a) + " after " + std::to_string(prm.max_depth) +
                                 " bisections");
        }
        continue;
      }
      run.add_batch(0.5 * (lo.a + hi.a), prm.n_initial, depth);
      changed = true;
      break;
    }
  }

  // Phase 4: top up to ESS_target.
  for (auto& [a, t] : run.tilts) {
    while (t.ess < prm.ess_target) {
      const double deficit = prm.ess_target - t.ess;
      const double per_sample = t.ess / static_cast<double>(t.ensemble.size());
      const auto n = static_cast<std::size_t>(std::ceil(deficit / std::max(per_sample, 1e-3)));
      run.add_batch(a, std::max<std::size_t>(n, 2));
    }
  }

  // Phase 5: MBAR over all tilts and the A/B log-ratio under W^(0).
  std::vector<WeightedEnsemble> ens;
  std::vector<BiasPotential> biases;
  for (auto& [a, t] : run.tilts) {
    t.ensemble.window_index = static_cast<int>(ens.size());
    ens.push_back(t.ensemble);
    biases.push_back(tilt_bias(a, cfg.cv));
  }
  std::vector<double> as;
  for (const auto& [a, t] : run.tilts) as.push_back(a);
  for (std::size_t i = 0; i < as.size(); ++i) {
    TiltEntry& t = run.tilts.at(as[i]);
    if (i > 0) {
      const auto o = run.overlap(t, as[i - 1]);
      t.overlap_left = o.value;
      t.overlap_left_raw = o.raw;
    }
    if (i + 1 < as.size()) {
      const auto o = run.overlap(t, as[i + 1]);
      t.overlap_right = o.value;
      t.overlap_right_raw = o.raw;
    }
    res.total_samples += t.ensemble.size();
    res.ladder.push_back(t);
  }
  res.mbar = mbar_solve(ens, biases);
  const WeightedSamples ws = mbar_samples(res.mbar);
  const CollectiveVariable cv = cfg.readout ? *cfg.readout : cfg.cv;
  // Membership of B is xi itself, so -log(E[1 - xi] / E[xi]) = -dg_ab.
  res.estimate = dg_from_membership(ws, [&](const Vec& x) { return 1.0 - cv.value(x); }, prm.n_boot,
                                    cfg.steering.seed);
  res.dg_ab = -res.estimate.dg_kbt;
  res.gaps = flagged_gaps;
  res.warnings = run.warnings;
  for (const auto& w : res.mbar.warnings) res.warnings.push_back(w);
  return res;
}

}  // namespace eds
