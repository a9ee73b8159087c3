#pragma once

#include "eds/bias.hpp"
#include "eds/dgdiff.hpp"
#include "eds/ensemble.hpp"
#include "eds/estimators.hpp"
#include "eds/gaussian_mixture.hpp"
#include "eds/noise_schedule.hpp"
#include "eds/quadrature.hpp"
#include "eds/steering.hpp"
#include "eds/surfaces.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace eds {

enum class StudyMethod { kUnbiased, kSteeredTilt, kDgDiff };

inline std::string_view to_string(StudyMethod m) {
  switch (m) {
    case StudyMethod::kUnbiased: return "unbiased";
    case StudyMethod::kSteeredTilt: return "steered-tilt";
    case StudyMethod::kDgDiff: return "dgdiff";
  }
  return "?";
}

inline StudyMethod parse_study_method(std::string_view s) {
  if (s == "unbiased") return StudyMethod::kUnbiased;
  if (s == "steered-tilt") return StudyMethod::kSteeredTilt;
  if (s == "dgdiff") return StudyMethod::kDgDiff;
  throw ConfigError("unknown study method '" + std::string(s) + "'");
}

inline std::vector<std::size_t> default_sample_grid() { return {10, 32, 100, 316, 1000, 3162, 10000, 100000}; }

struct StudyConfig {
  std::vector<std::size_t> grid = default_sample_grid();
  std::size_t repeats = 5;
  double tolerance_kcal = 1.0;
  double kcal_per_kbt = kKcalPerKbt300;
  SteeringConfig steering;  // n_particles is overridden by the grid
  DgDiffParams dgdiff;      // n_initial and ess_target are overridden by the grid
  Interpolation interpolation = Interpolation::kLinear;
  std::uint64_t seed = 0;
};

struct StudyRepeat {
  StudyMethod method = StudyMethod::kUnbiased;
  double delta_g = 0.0;  // oracle, k_BT
  std::size_t n = 0;
  std::size_t repeat = 0;
  double estimate = std::numeric_limits<double>::quiet_NaN();  // k_BT; NaN on catastrophic failure
  std::size_t total_samples = 0;
};

struct StudyRow {
  StudyMethod method = StudyMethod::kUnbiased;
  double delta_g = 0.0;
  std::size_t n = 0;
  std::size_t repeats = 0;
  std::size_t failed = 0;  // repeats with an empty basin
  double mean = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
  double abs_mean_error_kcal = std::numeric_limits<double>::infinity();
  double sd_kcal = std::numeric_limits<double>::infinity();
  double ci_low = std::numeric_limits<double>::quiet_NaN();   // mean -/+ 1.96 sd
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  double mean_total_samples = 0.0;
  bool converged = false;
};

struct StudyResult {
  StudyMethod method = StudyMethod::kUnbiased;
  double delta_g = 0.0;
  std::vector<StudyRow> rows;
  std::vector<StudyRepeat> repeats;
  std::optional<std::size_t> minimal_n;  // first converged grid point
  std::optional<double> minimal_total;   // mean total samples there
};

namespace detail {

inline constexpr std::uint64_t kStudyTag = 0x57dd1ULL;

inline std::uint64_t study_seed(std::uint64_t seed, StudyMethod m, double dg, std::size_t n, std::size_t r) {
  std::uint64_t s = derive_seed(seed, kStudyTag, static_cast<std::uint64_t>(m));
  s = derive_seed(s, static_cast<std::uint64_t>(std::llround(dg * 1000.0)), n);
  return derive_seed(s, kStudyTag, r);
}

}  // namespace detail

/// One estimate of -log(P[A] / P[B]) with A = {x < barrier}.
inline StudyRepeat study_estimate(const GaussianMixture& model, const NoiseSchedule& schedule, StudyMethod method,
                                  std::size_t n, const StudyConfig& cfg, std::uint64_t seed) {
  StudyRepeat r;
  r.method = method;
  r.n = n;
  const double x0 = barrier_location(model);
  auto chi = [x0](const Vec& x) { return x(0) < x0 ? 1.0 : 0.0; };
  SteeringConfig sc = cfg.steering;
  sc.n_particles = n;
  sc.seed = seed;
  DgEstimate d;
  switch (method) {
    case StudyMethod::kUnbiased: {
      const auto e = sample_unbiased(model, schedule, sc);
      d = dg_from_membership(from_ensemble(e), chi, 0, seed);
      r.total_samples = e.size();
      break;
    }
    case StudyMethod::kSteeredTilt: {
      const BiasPotential b = BiasPotential::linear_tilt(equalizing_slope(model));
      const auto e = steer(model, schedule, BiasSchedule(b, cfg.interpolation), sc);
      d = dg_from_membership(direct_reweight_samples(e, b), chi, 0, seed);
      r.total_samples = e.size();
      break;
    }
    case StudyMethod::kDgDiff: {
      DgDiffConfig dc = default_dgdiff_config(model);
      dc.params = cfg.dgdiff;
      dc.params.n_initial = n;
      dc.params.ess_target = static_cast<double>(n);
      dc.params.n_boot = 0;
      dc.steering = sc;
      dc.interpolation = cfg.interpolation;
      const auto res = run_dgdiff(model, schedule, dc);
      d = res.estimate;
      r.total_samples = res.total_samples;
      break;
    }
  }
  if (!d.failure) r.estimate = d.dg_kbt;
  return r;
}

/// Repeated estimates on each grid point of a double well with the given
/// free energy difference. Converged means |mean - oracle| and the SD are
/// both below the tolerance in kcal/mol; a repeat with an empty basin makes
/// the grid point unconverged.
inline StudyResult study_convergence(double delta_g, StudyMethod method, const StudyConfig& cfg,
                                     const NoiseSchedule& schedule = {}) {
  if (cfg.repeats < 2) throw ConfigError("study: repeats must be >= 2");
  if (cfg.grid.empty()) throw ConfigError("study: empty sample grid");
  const GaussianMixture model = make_double_well(delta_g);
  const double oracle = exact_free_energy_difference(model, below(barrier_location(model)));
  StudyResult out;
  out.method = method;
  out.delta_g = oracle;
  for (std::size_t n : cfg.grid) {
    StudyRow row;
    row.method = method;
    row.delta_g = oracle;
    row.n = n;
    row.repeats = cfg.repeats;
    std::vector<double> est;
    double total = 0.0;
    for (std::size_t r = 0; r < cfg.repeats; ++r) {
      StudyRepeat rep =
          study_estimate(model, schedule, method, n, cfg, detail::study_seed(cfg.seed, method, delta_g, n, r));
      rep.delta_g = oracle;
      rep.repeat = r;
      total += static_cast<double>(rep.total_samples);
      if (std::isfinite(rep.estimate)) {
        est.push_back(rep.estimate);
      } else {
        ++row.failed;
      }
      out.repeats.push_back(rep);
    }
    row.mean_total_samples = total / static_cast<double>(cfg.repeats);
    if (est.size() >= 2) {
      row.mean = std::accumulate(est.begin(), est.end(), 0.0) / static_cast<double>(est.size());
      row.sd = sample_sd(est);
      row.abs_mean_error_kcal = std::abs(row.mean - oracle) * cfg.kcal_per_kbt;
      row.sd_kcal = row.sd * cfg.kcal_per_kbt;
      row.ci_low = row.mean - 1.96 * row.sd;
      row.ci_high = row.mean + 1.96 * row.sd;
    }
    row.converged = row.failed == 0 && row.abs_mean_error_kcal < cfg.tolerance_kcal && row.sd_kcal < cfg.tolerance_kcal;
    if (row.converged && !out.minimal_n) {
      out.minimal_n = n;
      out.minimal_total = row.mean_total_samples;
    }
    out.rows.push_back(row);
  }
  return out;
}

struct FailureRow {
  std::size_t n = 0;
  std::size_t repeats = 0;
  std::size_t failures = 0;
  double rate = 0.0;
  double standard_error = 0.0;  // binomial sqrt(p (1 - p) / repeats)
};

/// Rate at which a subsample of n samples contains no sample with membership
/// below 1/2 (or, with `either_side`, misses one of the two sides). Whole
/// batches are drawn without replacement until n samples are collected.
inline std::vector<FailureRow> failure_rate(const std::vector<std::vector<double>>& batch_membership,
                                            const std::vector<std::size_t>& sizes, std::size_t repeats = 200,
                                            std::uint64_t seed = 0, bool either_side = false) {
  if (batch_membership.size() < 2) throw ConfigError("failure-rate: need at least 2 independent batches");
  std::size_t pool = 0;
  for (const auto& b : batch_membership) pool += b.size();
  std::vector<FailureRow> out;
  for (std::size_t n : sizes) {
    if (n == 0 || n > pool) {
      throw ConfigError("failure-rate: sample size " + std::to_string(n) + " exceeds the pool of " +
                        std::to_string(pool));
    }
    FailureRow row;
    row.n = n;
    const bool whole_pool = n == pool;
    row.repeats = whole_pool ? 1 : repeats;
    for (std::size_t r = 0; r < row.repeats; ++r) {
      std::vector<std::size_t> order(batch_membership.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      if (!whole_pool) {
        CounterRng rng(seed, n, r);
        for (std::size_t i = order.size(); i > 1; --i) {
          const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
          std::swap(order[i - 1], order[std::min(j, i - 1)]);
        }
      }
      std::size_t taken = 0;
      bool low = false;
      bool high = false;
      for (std::size_t b : order) {
        for (double m : batch_membership[b]) {
          if (taken == n) break;
          (m < 0.5 ? low : high) = true;
          ++taken;
        }
        if (taken == n) break;
      }
      row.failures += either_side ? !(low && high) : !low;
    }
    row.rate = static_cast<double>(row.failures) / static_cast<double>(row.repeats);
    row.standard_error = std::sqrt(row.rate * (1.0 - row.rate) / static_cast<double>(row.repeats));
    out.push_back(row);
  }
  return out;
}

}  // namespace eds
