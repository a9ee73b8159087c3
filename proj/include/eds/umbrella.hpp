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
#include <optional>
#include <string>
#include <vector>

namespace eds {

struct UmbrellaWindow {
  double center = 0.0;
  double stiffness = 1.0;
  std::size_t n_samples = 0;  // 0: use the steering config's n_particles

  BiasPotential bias(const CollectiveVariable& cv) const { return BiasPotential::harmonic(center, stiffness, cv); }
};

/// Evenly spaced centres over [lo, hi] with kappa_k = 1 / (c_k - c_{k-1})^2.
inline std::vector<UmbrellaWindow> design_windows(double lo, double hi, std::size_t k) {
  if (k < 2) throw ConfigError("design_windows: need at least 2 windows");
  if (!(hi > lo)) throw ConfigError("design_windows: empty xi range");
  const double spacing = (hi - lo) / static_cast<double>(k - 1);
  std::vector<UmbrellaWindow> w(k);
  for (std::size_t i = 0; i < k; ++i) {
    w[i].center = lo + spacing * static_cast<double>(i);
    w[i].stiffness = 1.0 / (spacing * spacing);
  }
  return w;
}

/// Bhattacharyya coefficient of N(0, s^2) and N(d, s^2): exp(-d^2 / (8 s^2)).
inline double gaussian_bhattacharyya(double spacing, double sigma) {
  return std::exp(-spacing * spacing / (8.0 * sigma * sigma));
}

/// Overlap area of N(0, s^2) and N(d, s^2): 2 Phi(-d / (2 s)).
inline double gaussian_overlap_area(double spacing, double sigma) {
  return std::erfc(spacing / (2.0 * sigma) / std::numbers::sqrt2);
}

struct NominalOverlap {
  double bhattacharyya = 0.0;
  double area = 0.0;
  bool in_band = false;
};

/// Overlap of neighbouring windows predicted from sigma_k = 1/sqrt(kappa_k).
inline std::vector<NominalOverlap> nominal_overlaps(const std::vector<UmbrellaWindow>& w, double band_lo = 0.1,
                                                    double band_hi = 0.3) {
  std::vector<NominalOverlap> out;
  for (std::size_t k = 0; k + 1 < w.size(); ++k) {
    const double d = w[k + 1].center - w[k].center;
    const double sigma = std::sqrt(0.5 / w[k].stiffness + 0.5 / w[k + 1].stiffness);
    NominalOverlap o;
    o.bhattacharyya = gaussian_bhattacharyya(d, sigma);
    o.area = gaussian_overlap_area(d, sigma);
    o.in_band = o.bhattacharyya >= band_lo && o.bhattacharyya <= band_hi;
    out.push_back(o);
  }
  return out;
}

/// Weighted mean and variance of xi.
inline std::pair<double, double> weighted_moments(const WeightedEnsemble& e, const CollectiveVariable& cv) {
  const auto w = e.normalized_weights();
  double m = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) m += w[i] * cv.value(e.particles[i].x);
  double v = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = cv.value(e.particles[i].x) - m;
    v += w[i] * d * d;
  }
  return {m, v};
}

/// kappa_k <- 1 / Var_{q_k}[xi] from pilot ensembles (steering weights).
inline std::vector<UmbrellaWindow> precondition(std::vector<UmbrellaWindow> windows,
                                                const std::vector<WeightedEnsemble>& pilots,
                                                const CollectiveVariable& cv, double kappa_max = 1e6,
                                                double min_ess = 30.0) {
  if (pilots.size() != windows.size()) throw std::invalid_argument("precondition: one pilot per window");
  for (std::size_t k = 0; k < windows.size(); ++k) {
    if (pilots[k].ess() < min_ess) {
      throw ConfigError("precondition: pilot for window " + std::to_string(k) + " has fewer than " +
                        std::to_string(static_cast<int>(min_ess)) + " effective samples");
    }
    const double var = weighted_moments(pilots[k], cv).second;
    windows[k].stiffness = var > 1.0 / kappa_max ? 1.0 / var : kappa_max;
  }
  return windows;
}

/// Integral of sqrt(q_a q_b) over xi, from weighted Gaussian KDEs sharing
/// bandwidth h, by the trapezoid rule on `n_grid` points.
inline double kde_overlap(std::span<const double> xa, std::span<const double> wa, std::span<const double> xb,
                          std::span<const double> wb, double h, std::size_t n_grid = 512) {
  const auto [alo, ahi] = std::minmax_element(xa.begin(), xa.end());
  const auto [blo, bhi] = std::minmax_element(xb.begin(), xb.end());
  const double lo = std::min(*alo, *blo) - 5.0 * h;
  const double hi = std::max(*ahi, *bhi) + 5.0 * h;
  const double dx = (hi - lo) / static_cast<double>(n_grid - 1);
  const double norm = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * h);
  auto density = [&](std::span<const double> xs, std::span<const double> ws, double g) {
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double z = (g - xs[i]) / h;
      if (std::abs(z) < 38.0) d += ws[i] * norm * std::exp(-0.5 * z * z);
    }
    return d;
  };
  double s = 0.0;
  for (std::size_t g = 0; g < n_grid; ++g) {
    const double x = lo + dx * static_cast<double>(g);
    const double f = std::sqrt(density(xa, wa, x) * density(xb, wb, x));
    s += (g == 0 || g + 1 == n_grid) ? 0.5 * f : f;
  }
  return s * dx;
}

struct UmbrellaConfig {
  CollectiveVariable cv;
  std::vector<UmbrellaWindow> windows;
  SteeringConfig steering;
  Interpolation interpolation = Interpolation::kLinear;
  /// Pilot particles per window for preconditioning; 0 disables it.
  std::size_t pilot_particles = 0;
  double kappa_max = 1e6;
  double ess_floor = 10.0;
  double band_lo = 0.1;
  double band_hi = 0.3;
  /// Histogram edges for the PMF; by default 64 bins over the centre range.
  std::optional<std::vector<double>> pmf_edges;
  std::size_t pmf_bins = kDefaultHistogramBins;
  std::size_t n_boot = 200;
  /// Rounds of midpoint insertion for poorly overlapping neighbours.
  std::size_t auto_bridge_rounds = 0;
  MbarOptions mbar;
};

struct NeighbourOverlap {
  std::size_t k = 0;  // pair (k, k+1)
  double kde = 0.0;
  double nominal_bhattacharyya = 0.0;
  double nominal_area = 0.0;
  double mbar = 0.0;  // max(O_{k,k+1}, O_{k+1,k})
  bool in_band = false;
};

struct UmbrellaDiagnostics {
  std::vector<double> ess;
  std::vector<bool> low_ess;
  std::vector<NeighbourOverlap> neighbours;
  OverlapReport overlap;
  std::vector<double> bridge_centers;  // suggested midpoints
  std::vector<std::string> warnings;
  std::size_t bridge_rounds = 0;
};

struct UmbrellaResult {
  std::vector<UmbrellaWindow> windows;
  std::vector<WeightedEnsemble> ensembles;
  MbarResult mbar;
  PmfEstimate pmf;
  std::vector<double> free_energy_se;  // bootstrap SE of f_k - f_1
  UmbrellaDiagnostics diagnostics;
};

namespace detail {

inline constexpr std::uint64_t kUmbrellaTag = 0x0b3e11a;
inline constexpr std::uint64_t kPilotTag = 0x0b3e11b;

inline WeightedEnsemble run_window(const GaussianMixture& model, const NoiseSchedule& schedule,
                                   const UmbrellaConfig& cfg, const UmbrellaWindow& w, std::uint64_t tag,
                                   std::size_t index, std::optional<std::size_t> n_override = std::nullopt) {
  SteeringConfig sc = cfg.steering;
  sc.seed = derive_seed(cfg.steering.seed, tag, static_cast<std::uint64_t>(std::llround(w.center * 1e6)));
  sc.window_index = static_cast<int>(index);
  if (n_override) {
    sc.n_particles = *n_override;
  } else if (w.n_samples > 0) {
    sc.n_particles = w.n_samples;
  }
  return steer(model, schedule, BiasSchedule(w.bias(cfg.cv), cfg.interpolation), sc);
}

}  // namespace detail

/// Per-window diagnostics, MBAR overlap and bridge suggestions.
inline UmbrellaDiagnostics diagnose_umbrella(const std::vector<UmbrellaWindow>& windows,
                                             const std::vector<WeightedEnsemble>& ensembles, const MbarResult& mbar,
                                             const UmbrellaConfig& cfg) {
  UmbrellaDiagnostics d;
  const std::size_t K = windows.size();
  for (std::size_t k = 0; k < K; ++k) {
    const double e = ensembles[k].terminal_ess;
    d.ess.push_back(e);
    d.low_ess.push_back(e < cfg.ess_floor);
    if (e < cfg.ess_floor) {
      d.warnings.push_back("window " + std::to_string(k) + ": ESS " + std::to_string(e) + " below floor " +
                           std::to_string(cfg.ess_floor));
    }
    for (const auto& w : ensembles[k].warnings) d.warnings.push_back("window " + std::to_string(k) + ": " + w);
  }
  d.overlap = overlap_matrix(mbar, cfg.mbar.overlap_floor);
  if (!d.overlap.connected) d.warnings.push_back("MBAR overlap graph is disconnected");

  // KDE overlaps with one bandwidth shared by all windows.
  std::vector<std::vector<double>> xs(K), ws(K);
  std::vector<double> all_x, all_w;
  for (std::size_t k = 0; k < K; ++k) {
    ws[k] = ensembles[k].normalized_weights();
    for (const auto& p : ensembles[k].particles) xs[k].push_back(cfg.cv.value(p.x));
    all_x.insert(all_x.end(), xs[k].begin(), xs[k].end());
  }
  double h = 0.0;
  for (std::size_t k = 0; k < K; ++k) h += silverman_bandwidth(xs[k], ws[k]);
  h /= static_cast<double>(K);
  const auto nominal = nominal_overlaps(windows, cfg.band_lo, cfg.band_hi);
  for (std::size_t k = 0; k + 1 < K; ++k) {
    NeighbourOverlap o;
    o.k = k;
    o.kde = kde_overlap(xs[k], ws[k], xs[k + 1], ws[k + 1], h);
    o.nominal_bhattacharyya = nominal[k].bhattacharyya;
    o.nominal_area = nominal[k].area;
    const auto a = static_cast<Eigen::Index>(k);
    o.mbar = std::max(d.overlap.matrix(a, a + 1), d.overlap.matrix(a + 1, a));
    o.in_band = o.kde >= cfg.band_lo && o.kde <= cfg.band_hi;
    if (!o.in_band) {
      d.warnings.push_back("windows " + std::to_string(k) + "," + std::to_string(k + 1) + ": overlap " +
                           std::to_string(o.kde) + " outside band [" + std::to_string(cfg.band_lo) + ", " +
                           std::to_string(cfg.band_hi) + "]");
    }
    if (o.kde < cfg.band_lo || o.mbar < cfg.mbar.overlap_floor) {
      d.bridge_centers.push_back(0.5 * (windows[k].center + windows[k + 1].center));
    }
    d.neighbours.push_back(o);
  }
  return d;
}

/// Steers every window, combines them with weighted MBAR and estimates the
/// unbiased PMF along the CV from W^(0).
inline UmbrellaResult run_umbrelladiff(const GaussianMixture& model, const NoiseSchedule& schedule,
                                       const UmbrellaConfig& cfg) {
  if (cfg.windows.empty()) throw ConfigError("umbrella: no windows");
  for (std::size_t k = 1; k < cfg.windows.size(); ++k) {
    if (!(cfg.windows[k].center > cfg.windows[k - 1].center)) {
      throw ConfigError("umbrella: window centres must be strictly increasing");
    }
  }
  for (const auto& w : cfg.windows) {
    if (!(w.stiffness > 0.0)) throw ConfigError("umbrella: stiffness must be > 0");
  }
  UmbrellaResult res;
  res.windows = cfg.windows;
  if (cfg.pilot_particles > 0) {
    std::vector<WeightedEnsemble> pilots;
    for (std::size_t k = 0; k < res.windows.size(); ++k) {
      pilots.push_back(detail::run_window(model, schedule, cfg, res.windows[k], detail::kPilotTag, k,
                                          cfg.pilot_particles));
    }
    res.windows = precondition(res.windows, pilots, cfg.cv, cfg.kappa_max);
  }
  for (std::size_t k = 0; k < res.windows.size(); ++k) {
    res.ensembles.push_back(detail::run_window(model, schedule, cfg, res.windows[k], detail::kUmbrellaTag, k));
  }

  MbarOptions mo;
  auto solve = [&] {
    std::vector<BiasPotential> biases;
    for (const auto& w : res.windows) biases.push_back(w.bias(cfg.cv));
    mo = cfg.mbar;
    if (!mo.masses && cfg.steering.branch && cfg.steering.branch->factor > 1) {
      // Late-branched copies are correlated: N_k / g_k with g_k = B.
      std::vector<double> m;
      for (const auto& e : res.ensembles) m.push_back(e.ess() / static_cast<double>(cfg.steering.branch->factor));
      mo.masses = m;
    }
    res.mbar = mbar_solve(res.ensembles, biases, mo);
    res.diagnostics = diagnose_umbrella(res.windows, res.ensembles, res.mbar, cfg);
  };
  solve();

  std::size_t rounds = 0;
  while (rounds < cfg.auto_bridge_rounds && !res.diagnostics.bridge_centers.empty()) {
    for (double c : res.diagnostics.bridge_centers) {
      const auto it = std::lower_bound(res.windows.begin(), res.windows.end(), c,
                                       [](const UmbrellaWindow& w, double v) { return w.center < v; });
      const auto pos = static_cast<std::size_t>(it - res.windows.begin());
      const double half = res.windows[pos].center - c;
      UmbrellaWindow nw{c, 1.0 / (half * half), 0};
      res.windows.insert(res.windows.begin() + static_cast<std::ptrdiff_t>(pos), nw);
      res.ensembles.insert(res.ensembles.begin() + static_cast<std::ptrdiff_t>(pos),
                           detail::run_window(model, schedule, cfg, nw, detail::kUmbrellaTag, pos));
    }
    for (std::size_t k = 0; k < res.ensembles.size(); ++k) res.ensembles[k].window_index = static_cast<int>(k);
    ++rounds;
    solve();
  }
  res.diagnostics.bridge_rounds = rounds;
  for (const auto& w : res.mbar.warnings) res.diagnostics.warnings.push_back(w);

  PmfOptions po;
  po.edges = cfg.pmf_edges ? *cfg.pmf_edges
                           : uniform_edges(res.windows.front().center, res.windows.back().center, cfg.pmf_bins);
  po.n_boot = cfg.n_boot;
  po.seed = cfg.steering.seed;
  res.pmf = pmf_estimate(mbar_samples(res.mbar), cfg.cv, po);

  const auto reps = mbar_bootstrap(
      res.mbar, cfg.n_boot, cfg.steering.seed, [](const MbarResult& r) {
        return std::vector<double>(r.f.data(), r.f.data() + r.f.size());
      },
      mo);
  res.free_energy_se.assign(res.windows.size(), 0.0);
  for (std::size_t k = 0; k < res.windows.size(); ++k) {
    std::vector<double> col;
    for (const auto& r : reps) col.push_back(r[k]);
    res.free_energy_se[k] = sample_sd(col);
  }
  return res;
}

}  // namespace eds
