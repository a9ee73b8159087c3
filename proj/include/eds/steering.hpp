#pragma once

#include "eds/bias.hpp"
#include "eds/ensemble.hpp"
#include "eds/gaussian_mixture.hpp"
#include "eds/noise_schedule.hpp"
#include "eds/rng.hpp"
#include "eds/types.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

namespace eds {

struct BranchConfig {
  double t_branch = 0.9;
  std::size_t factor = 2;
};

struct SteeringConfig {
  std::size_t n_particles = 1000;
  std::size_t n_steps = 200;
  /// sigma~_t = noise_scale * sigma_t
  double noise_scale = 1.0;
  /// Resample every `resample_period` steps when set.
  std::optional<std::size_t> resample_period;
  /// Resample when ESS < ess_threshold * n when set.
  std::optional<double> ess_threshold = 0.5;
  bool terminal_resample = false;
  std::optional<BranchConfig> branch;
  std::uint64_t seed = 0;
  int window_index = 0;

  void validate() const {
    if (n_particles < 1) throw ConfigError("steering: n_particles must be >= 1");
    if (n_steps < 2) throw ConfigError("steering: n_steps must be >= 2");
    if (!(noise_scale >= 0.0)) throw ConfigError("steering: noise_scale must be >= 0");
    if (ess_threshold && !(*ess_threshold > 0.0 && *ess_threshold <= 1.0)) {
      throw ConfigError("steering: ess_threshold must lie in (0, 1]");
    }
    if (resample_period && *resample_period < 1) throw ConfigError("steering: resample_period must be >= 1");
    if (branch && branch->factor < 1) throw ConfigError("steering: branch factor must be >= 1");
  }
};

namespace detail {

[[noreturn]] inline void non_finite(const char* what, std::size_t step, std::size_t particle) {
  std::ostringstream os;
  os << "non-finite " << what << " at step " << step << ", particle " << particle;
  throw NumericalError(os.str());
}

/// Euler-Maruyama integration of the reverse SDE from t = 0 to t = 1 - eps,
/// optionally with the bias control drift and the Feynman-Kac log-weight
/// ODE (left-endpoint rule, same step). Noise for the particle in slot i at
/// step k comes from CounterRng(seed, i, k).
inline WeightedEnsemble integrate_reverse(const GaussianMixture& model, const NoiseSchedule& schedule,
                                          const BiasSchedule* bias, const SteeringConfig& cfg) {
  cfg.validate();
  const int d = model.dimension();
  const double t_end = schedule.t_end();
  const double dt = t_end / static_cast<double>(cfg.n_steps);
  const double sqrt_dt = std::sqrt(dt);

  WeightedEnsemble ens;
  ens.window_index = cfg.window_index;
  ens.particles.resize(cfg.n_particles);
  for (std::size_t i = 0; i < cfg.n_particles; ++i) {
    CounterRng rng(cfg.seed, i, kInitStep);
    Vec x(d);
    for (int j = 0; j < d; ++j) x(j) = rng.normal();
    ens.particles[i] = {x, 0.0, static_cast<std::int64_t>(i), -1};
  }

  bool branched = false;
  bool warned_collapse = false;
  std::vector<double> force;
  for (std::size_t k = 0; k < cfg.n_steps; ++k) {
    const double t = static_cast<double>(k) * dt;
    if (cfg.branch && !branched && t >= cfg.branch->t_branch) {
      ens.t = t;
      ens = late_branch(ens, t_end, cfg.branch->factor);
      branched = true;
    }
    const std::size_t n = ens.size();
    const DiffusedMixture pt = model.diffused(schedule, t);
    const double beta = schedule.beta(t);
    const double f_rate = schedule.drift_rate(t);
    const double ctrl_var = cfg.noise_scale * cfg.noise_scale * beta;  // sigma~^2
    const double noise_sd = std::sqrt(ctrl_var) * sqrt_dt;
    // The bias interpolates over the integration interval so that b_t = b at t_end.
    const double u = t / t_end;
    const double lam = bias ? bias->lambda(u) : 0.0;
    const double lam_dot = bias ? bias->lambda_deriv(u) / t_end : 0.0;

    force.assign(n, 0.0);
    Vec score(d);
    for (std::size_t i = 0; i < n; ++i) {
      Particle& p = ens.particles[i];
      pt.log_density_and_score(p.x, score);
      Vec drift = -f_rate * p.x + 0.5 * (beta + ctrl_var) * score;
      if (bias) {
        const BiasEval b = bias->bias().eval(p.x);
        // F_t = -d b_t/dt + grad b_t . (f_t - sigma_t^2/2 grad log p_t)
        force[i] = -lam_dot * b.value + lam * b.gradient.dot(f_rate * p.x - 0.5 * beta * score);
        drift -= 0.5 * ctrl_var * lam * b.gradient;
      }
      CounterRng rng(cfg.seed, i, k);
      Vec x_new = p.x + dt * drift;
      for (int j = 0; j < d; ++j) x_new(j) += noise_sd * rng.normal();
      if (!x_new.allFinite()) non_finite("state", k, i);
      p.x = x_new;
    }

    double step_ess = static_cast<double>(n);
    bool resampled = false;
    if (bias) {
      const auto w = ens.normalized_weights();
      double f_bar = 0.0;
      for (std::size_t i = 0; i < n; ++i) f_bar += w[i] * force[i];
      double max_lw = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        double& lw = ens.particles[i].log_weight;
        lw += dt * (force[i] - f_bar);
        if (!std::isfinite(lw)) non_finite("log-weight", k, i);
        max_lw = std::max(max_lw, lw);
      }
      for (auto& p : ens.particles) p.log_weight -= max_lw;
      step_ess = ens.ess();
      if (step_ess < 2.0 && !warned_collapse) {
        ens.warnings.push_back("ESS collapsed below 2 at step " + std::to_string(k + 1));
        warned_collapse = true;
      }
      const bool last = (k + 1 == cfg.n_steps);
      const bool periodic = cfg.resample_period && ((k + 1) % *cfg.resample_period == 0);
      const bool low_ess = cfg.ess_threshold && step_ess < *cfg.ess_threshold * static_cast<double>(n);
      if (!last && (periodic || low_ess)) {
        CounterRng rrng(cfg.seed, kResampleStream, k);
        ens = stratified_resample(ens, rrng, branched ? ResampleLabels::kInherit : ResampleLabels::kFresh);
        resampled = true;
      }
    }
    ens.t = static_cast<double>(k + 1) * dt;
    ens.step_log.push_back({k + 1, ens.t, step_ess, resampled});
  }

  ens.t = t_end;
  ens.terminal_ess = ens.ess();
  if (cfg.terminal_resample && bias) {
    const double terminal_ess = ens.terminal_ess;
    CounterRng rrng(cfg.seed, kResampleStream, cfg.n_steps);
    ens = stratified_resample(ens, rrng, ResampleLabels::kInherit);
    ens.terminal_ess = terminal_ess;
    if (!ens.step_log.empty()) ens.step_log.back().resampled = true;
  }
  return ens;
}

}  // namespace detail

/// Samples the unbiased model by integrating dx = g_t dt + sigma~_t dW,
/// g_t = -f_t + (sigma_t^2 + sigma~_t^2)/2 grad log p_t. All weights equal.
inline WeightedEnsemble sample_unbiased(const GaussianMixture& model, const NoiseSchedule& schedule,
                                        const SteeringConfig& cfg) {
  return detail::integrate_reverse(model, schedule, nullptr, cfg);
}

/// Weighted samples targeting q ~ p e^{-b}. The drift gains the control term
/// -(sigma~^2/2) grad b_t, and each step adds dt (F_t(x_i) - F_bar) to the
/// log-weights, F_bar being the self-normalised batch mean of F_t.
inline WeightedEnsemble steer(const GaussianMixture& model, const NoiseSchedule& schedule,
                              const BiasSchedule& bias, const SteeringConfig& cfg) {
  return detail::integrate_reverse(model, schedule, &bias, cfg);
}

}  // namespace eds
