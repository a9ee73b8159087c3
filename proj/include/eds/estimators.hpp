#pragma once

#include "eds/bias.hpp"
#include "eds/collective_variable.hpp"
#include "eds/ensemble.hpp"
#include "eds/mbar.hpp"
#include "eds/pmf.hpp"
#include "eds/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

namespace eds {

inline constexpr std::size_t kDefaultBootstrap = 1000;
inline constexpr std::size_t kDefaultHistogramBins = 64;

/// Samples with (unnormalised) log-weights and a cluster label per sample.
/// Clusters are the units of the bootstrap.
struct WeightedSamples {
  std::vector<Vec> x;
  std::vector<double> log_weight;
  std::vector<std::size_t> cluster;

  std::size_t size() const { return x.size(); }
  std::vector<double> weights() const { return normalize_log_weights(log_weight); }
  double ess() const { return eds::ess(weights()); }
};

namespace detail {

inline std::vector<std::size_t> dense_labels(std::span<const std::int64_t> ids) {
  std::vector<std::int64_t> u(ids.begin(), ids.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  std::vector<std::size_t> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out[i] = static_cast<std::size_t>(std::lower_bound(u.begin(), u.end(), ids[i]) - u.begin());
  }
  return out;
}

}  // namespace detail

/// Steering weights of one ensemble, clustered by trajectory_id.
inline WeightedSamples from_ensemble(const WeightedEnsemble& e) {
  WeightedSamples s;
  std::vector<std::int64_t> ids;
  for (const auto& p : e.particles) {
    s.x.push_back(p.x);
    s.log_weight.push_back(p.log_weight);
    ids.push_back(p.trajectory_id);
  }
  s.cluster = detail::dense_labels(ids);
  return s;
}

/// W_n = w_n e^{b(x_n)} in log space (single biased ensemble).
inline std::vector<double> direct_reweight_log(const WeightedEnsemble& e, const BiasPotential& b) {
  std::vector<double> lw(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) lw[i] = e.particles[i].log_weight + b.value(e.particles[i].x);
  return lw;
}

/// Normalised direct-reweighting weights.
inline std::vector<double> direct_reweight(const WeightedEnsemble& e, const BiasPotential& b) {
  return normalize_log_weights(direct_reweight_log(e, b));
}

inline WeightedSamples direct_reweight_samples(const WeightedEnsemble& e, const BiasPotential& b) {
  WeightedSamples s = from_ensemble(e);
  s.log_weight = direct_reweight_log(e, b);
  return s;
}

/// Unbiased-state MBAR weights with one cluster per (window, trajectory).
inline WeightedSamples mbar_samples(const MbarResult& r) {
  WeightedSamples s;
  s.x = r.samples->x;
  s.log_weight = target_log_weights(r, {});
  s.cluster = cluster_index(*r.samples);
  return s;
}

/// Draws clusters with replacement (as many as there are clusters) and calls
/// `visit` with per-sample multiplicities, once per replicate.
template <class Visit>
void cluster_bootstrap(const WeightedSamples& s, std::size_t n_boot, std::uint64_t seed, Visit&& visit) {
  const std::size_t nc = s.cluster.empty() ? 0 : *std::max_element(s.cluster.begin(), s.cluster.end()) + 1;
  std::vector<double> counts(nc);
  std::vector<double> mult(s.size());
  for (std::size_t b = 0; b < n_boot; ++b) {
    std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (b + 1)));
    std::uniform_int_distribution<std::size_t> pick(0, nc - 1);
    std::fill(counts.begin(), counts.end(), 0.0);
    for (std::size_t j = 0; j < nc; ++j) counts[pick(rng)] += 1.0;
    for (std::size_t n = 0; n < s.size(); ++n) mult[n] = counts[s.cluster[n]];
    visit(std::span<const double>(mult));
  }
}

struct Estimate {
  double value = 0.0;
  double standard_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  if (i + 1 >= v.size()) return v.back();
  return v[i] + (pos - static_cast<double>(i)) * (v[i + 1] - v[i]);
}

inline double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// Self-normalised weighted mean sum W o / sum W.
template <class Obs>
double weighted_mean(const WeightedSamples& s, Obs&& o, std::span<const double> mult = {}) {
  const auto w = s.weights();
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double wi = mult.empty() ? w[i] : w[i] * mult[i];
    if (wi == 0.0) continue;
    num += wi * o(s.x[i]);
    den += wi;
  }
  return num / den;
}

/// Weighted expectation with a cluster-bootstrap standard error and 95%
/// percentile interval.
template <class Obs>
Estimate expectation(const WeightedSamples& s, Obs&& o, std::size_t n_boot = kDefaultBootstrap,
                     std::uint64_t seed = 0) {
  Estimate e;
  e.value = weighted_mean(s, o);
  std::vector<double> reps;
  reps.reserve(n_boot);
  cluster_bootstrap(s, n_boot, seed, [&](std::span<const double> mult) {
    const double v = weighted_mean(s, o, mult);
    if (std::isfinite(v)) reps.push_back(v);
  });
  e.standard_error = sample_sd(reps);
  e.ci_low = quantile(reps, 0.025);
  e.ci_high = quantile(reps, 0.975);
  return e;
}

struct DgEstimate {
  bool failure = false;  // catastrophic: empirical membership mass 0 or 1
  double mass = 0.0;     // E_W[chi]
  double dg_kbt = std::numeric_limits<double>::quiet_NaN();
  double dg_kcal = std::numeric_limits<double>::quiet_NaN();
  double standard_error = std::numeric_limits<double>::quiet_NaN();
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_boot = 0;
  std::size_t n_boot_failed = 0;  // replicates with mass 0 or 1
};

inline double dg_from_mass(double m) { return -std::log(m / (1.0 - m)); }

namespace detail {

/// sum W chi / sum W and sum W (1 - chi) / sum W, kept separate so a tiny
/// complement keeps its precision.
template <class Chi>
std::pair<double, double> split_mass(const WeightedSamples& s, Chi&& chi, std::span<const double> w,
                                     std::span<const double> mult) {
  double in = 0.0;
  double out = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double wi = mult.empty() ? w[i] : w[i] * mult[i];
    if (wi == 0.0) continue;
    const double c = chi(s.x[i]);
    in += wi * c;
    out += wi * (1.0 - c);
  }
  return {in, out};
}

}  // namespace detail

/// Delta G = -log(E[chi] / (1 - E[chi])) in k_BT with cluster-bootstrap CI.
template <class Chi>
DgEstimate dg_from_membership(const WeightedSamples& s, Chi&& chi, std::size_t n_boot = kDefaultBootstrap,
                              std::uint64_t seed = 0, double kcal_per_kbt = kKcalPerKbt300) {
  DgEstimate d;
  const auto w = s.weights();
  const auto [in, out] = detail::split_mass(s, chi, w, {});
  d.mass = in / (in + out);
  if (!(in > 0.0) || !(out > 0.0)) {
    d.failure = true;
    return d;
  }
  d.dg_kbt = -std::log(in / out);
  d.dg_kcal = kbt_to_kcal(d.dg_kbt, kcal_per_kbt);
  if (n_boot == 0) return d;
  std::vector<double> reps;
  reps.reserve(n_boot);
  cluster_bootstrap(s, n_boot, seed, [&](std::span<const double> mult) {
    const auto [bi, bo] = detail::split_mass(s, chi, w, mult);
    if (bi > 0.0 && bo > 0.0) {
      reps.push_back(-std::log(bi / bo));
    } else {
      ++d.n_boot_failed;
    }
  });
  d.n_boot = n_boot;
  d.standard_error = sample_sd(reps);
  d.ci_low = quantile(reps, 0.025);
  d.ci_high = quantile(reps, 0.975);
  return d;
}

/// Histogram grid: `bins` uniform bins over the observed xi range expanded by
/// 5% on each side.
inline std::vector<double> default_edges(std::span<const double> xi, std::size_t bins = kDefaultHistogramBins) {
  if (xi.empty()) throw std::invalid_argument("default_edges: no samples");
  const auto [lo_it, hi_it] = std::minmax_element(xi.begin(), xi.end());
  double lo = *lo_it;
  double hi = *hi_it;
  double pad = 0.05 * (hi - lo);
  if (!(pad > 0.0)) pad = 0.5;
  return uniform_edges(lo - pad, hi + pad, bins);
}

namespace detail {

inline std::vector<double> histogram_mass(std::span<const double> xi, std::span<const double> w,
                                          std::span<const double> mult, const std::vector<double>& edges) {
  const std::size_t nb = edges.size() - 1;
  std::vector<double> mass(nb, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < xi.size(); ++i) {
    const double wi = mult.empty() ? w[i] : w[i] * mult[i];
    if (wi == 0.0) continue;
    total += wi;
    if (xi[i] < edges.front() || xi[i] >= edges.back()) continue;
    const auto j = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), xi[i]) - edges.begin()) - 1;
    mass[std::min(j, nb - 1)] += wi;
  }
  for (double& m : mass) m /= total;
  return mass;
}

inline std::vector<double> mass_to_pmf(const std::vector<double>& mass, const std::vector<double>& edges) {
  std::vector<double> v(mass.size());
  for (std::size_t j = 0; j < mass.size(); ++j) {
    v[j] = mass[j] > 0.0 ? -std::log(mass[j] / (edges[j + 1] - edges[j])) : std::numeric_limits<double>::infinity();
  }
  return v;
}

inline std::vector<double> cv_values(const WeightedSamples& s, const CollectiveVariable& cv) {
  std::vector<double> xi(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) xi[i] = cv.value(s.x[i]);
  return xi;
}

/// Per-bin bootstrap SE of a PMF; the PMF constant is fixed per replicate by
/// matching the weighted mean over bins finite in both.
template <class Pmf>
std::vector<double> pmf_bootstrap_se(const WeightedSamples& s, const std::vector<double>& values,
                                     std::size_t n_boot, std::uint64_t seed, Pmf&& pmf_of) {
  const std::size_t nb = values.size();
  std::vector<std::vector<double>> reps(nb);
  cluster_bootstrap(s, n_boot, seed, [&](std::span<const double> mult) {
    auto v = pmf_of(mult);
    double off = 0.0;
    std::size_t cnt = 0;
    for (std::size_t j = 0; j < nb; ++j) {
      if (std::isfinite(v[j]) && std::isfinite(values[j])) {
        off += v[j] - values[j];
        ++cnt;
      }
    }
    if (cnt == 0) return;
    off /= static_cast<double>(cnt);
    for (std::size_t j = 0; j < nb; ++j) {
      if (std::isfinite(v[j])) reps[j].push_back(v[j] - off);
    }
  });
  std::vector<double> se(nb);
  for (std::size_t j = 0; j < nb; ++j) {
    se[j] = std::isfinite(values[j]) && reps[j].size() >= 2 ? sample_sd(reps[j])
                                                            : std::numeric_limits<double>::quiet_NaN();
  }
  return se;
}

}  // namespace detail

struct PmfOptions {
  PmfKind kind = PmfKind::kHistogram;
  std::optional<std::vector<double>> edges;  // histogram
  std::optional<std::vector<double>> grid;   // kernel evaluation points
  std::optional<double> bandwidth;           // kernel; Silverman when unset
  std::size_t bins = kDefaultHistogramBins;
  std::size_t n_boot = kDefaultBootstrap;
  std::uint64_t seed = 0;
};

/// Weighted Silverman bandwidth 0.9 min(sd, IQR/1.34) ESS^{-1/5}.
inline double silverman_bandwidth(std::span<const double> xi, std::span<const double> w) {
  double m = 0.0;
  for (std::size_t i = 0; i < xi.size(); ++i) m += w[i] * xi[i];
  double var = 0.0;
  for (std::size_t i = 0; i < xi.size(); ++i) var += w[i] * (xi[i] - m) * (xi[i] - m);
  std::vector<std::size_t> order(xi.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return xi[a] < xi[b]; });
  double c = 0.0;
  double q1 = xi[order.front()], q3 = xi[order.back()];
  bool got1 = false;
  for (auto i : order) {
    c += w[i];
    if (!got1 && c >= 0.25) {
      q1 = xi[i];
      got1 = true;
    }
    if (c >= 0.75) {
      q3 = xi[i];
      break;
    }
  }
  double spread = std::sqrt(var);
  if (q3 > q1) spread = std::min(spread, (q3 - q1) / 1.34);
  if (!(spread > 0.0)) spread = 1e-3;
  return 0.9 * spread * std::pow(eds::ess(w), -0.2);
}

namespace detail {

inline std::vector<double> kde_pmf(std::span<const double> xi, std::span<const double> w,
                                   std::span<const double> mult, const std::vector<double>& grid, double h) {
  std::vector<double> dens(grid.size(), 0.0);
  double total = 0.0;
  const double norm = 1.0 / (std::sqrt(2.0 * std::numbers::pi) * h);
  for (std::size_t i = 0; i < xi.size(); ++i) {
    const double wi = mult.empty() ? w[i] : w[i] * mult[i];
    if (wi == 0.0) continue;
    total += wi;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const double z = (grid[g] - xi[i]) / h;
      if (std::abs(z) < 38.0) dens[g] += wi * norm * std::exp(-0.5 * z * z);
    }
  }
  std::vector<double> v(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    v[g] = dens[g] > 0.0 ? -std::log(dens[g] / total) : std::numeric_limits<double>::infinity();
  }
  return v;
}

}  // namespace detail

/// PMF along a CV: weighted histogram (default) or Gaussian KDE, min-shifted
/// to 0, with per-bin cluster-bootstrap standard errors.
inline PmfEstimate pmf_estimate(const WeightedSamples& s, const CollectiveVariable& cv, const PmfOptions& opt = {}) {
  if (s.size() == 0) throw std::invalid_argument("pmf_estimate: no samples");
  const auto xi = detail::cv_values(s, cv);
  const auto w = s.weights();
  PmfEstimate out;
  out.kind = opt.kind;
  if (opt.kind == PmfKind::kHistogram) {
    out.edges = opt.edges ? *opt.edges : default_edges(xi, opt.bins);
    check_edges(out.edges);
    out.centers = bin_centers(out.edges);
    out.mass = detail::histogram_mass(xi, w, {}, out.edges);
    out.values = detail::mass_to_pmf(out.mass, out.edges);
    out.standard_errors = detail::pmf_bootstrap_se(s, out.values, opt.n_boot, opt.seed, [&](auto mult) {
      return detail::mass_to_pmf(detail::histogram_mass(xi, w, mult, out.edges), out.edges);
    });
  } else if (opt.kind == PmfKind::kKernel) {
    const double h = opt.bandwidth ? *opt.bandwidth : silverman_bandwidth(xi, w);
    if (!(h > 0.0)) throw std::invalid_argument("pmf_estimate: bandwidth must be > 0");
    out.centers = opt.grid ? *opt.grid : bin_centers(default_edges(xi, opt.bins));
    if (out.centers.size() < 2) throw std::invalid_argument("pmf_estimate: kernel grid needs >= 2 points");
    out.values = detail::kde_pmf(xi, w, {}, out.centers, h);
    out.standard_errors = detail::pmf_bootstrap_se(s, out.values, opt.n_boot, opt.seed,
                                                   [&](auto mult) { return detail::kde_pmf(xi, w, mult, out.centers, h); });
  } else {
    throw std::invalid_argument("pmf_estimate: kind must be histogram or kernel");
  }
  const double shift = [&] {
    double m = std::numeric_limits<double>::infinity();
    for (double v : out.values) {
      if (std::isfinite(v)) m = std::min(m, v);
    }
    return m;
  }();
  if (std::isfinite(shift)) {
    for (double& v : out.values) v -= shift;
  }
  return out;
}

/// Max |a - b - offset| over bins where both are finite and `mask` holds.
/// The offset is the midrange of the differences, which minimises the max
/// error, so max_error is the sup-norm distance modulo a constant.
struct PmfComparison {
  double max_error = 0.0;
  double offset = 0.0;
  std::size_t n_bins = 0;
  std::size_t worst_bin = 0;
};

inline PmfComparison compare_pmf(std::span<const double> estimate, std::span<const double> reference,
                                 const std::vector<bool>& mask = {}) {
  std::vector<double> d;
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < estimate.size(); ++j) {
    if (!mask.empty() && !mask[j]) continue;
    if (!std::isfinite(estimate[j]) || !std::isfinite(reference[j])) continue;
    d.push_back(estimate[j] - reference[j]);
    idx.push_back(j);
  }
  PmfComparison c;
  c.n_bins = d.size();
  if (d.empty()) {
    c.max_error = std::numeric_limits<double>::infinity();
    return c;
  }
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  c.offset = 0.5 * (*lo + *hi);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double e = std::abs(d[i] - c.offset);
    if (e > c.max_error) {
      c.max_error = e;
      c.worst_bin = idx[i];
    }
  }
  return c;
}

}  // namespace eds
