#pragma once

#include "eds/rng.hpp"
#include "eds/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace eds {

struct Particle {
  Vec x;
  double log_weight = 0.0;
  std::int64_t trajectory_id = 0;
  std::int64_t ancestor_id = -1;
};

struct StepRecord {
  std::size_t step = 0;
  double t = 0.0;
  double ess = 0.0;
  bool resampled = false;
};

/// Kish effective sample size (sum w)^2 / sum w^2.
inline double ess(std::span<const double> weights) {
  double s = 0.0;
  double s2 = 0.0;
  for (double w : weights) {
    if (w < 0.0 || !std::isfinite(w)) throw std::invalid_argument("ess: weights must be finite and >= 0");
    s += w;
    s2 += w * w;
  }
  if (!(s > 0.0)) throw std::invalid_argument("ess: all weights are zero");
  return s * s / s2;
}

/// Normalised weights from log-weights, computed after max-subtraction.
inline std::vector<double> normalize_log_weights(std::span<const double> log_w) {
  double m = -std::numeric_limits<double>::infinity();
  for (double l : log_w) m = std::max(m, l);
  std::vector<double> w(log_w.size());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = std::exp(log_w[i] - m);
    s += w[i];
  }
  for (double& v : w) v /= s;
  return w;
}

/// Weighted particles at one time of the reverse process.
struct WeightedEnsemble {
  std::vector<Particle> particles;
  int window_index = 0;
  double t = 0.0;
  std::vector<StepRecord> step_log;
  std::vector<std::string> warnings;
  /// ESS of the steering weights just before terminal resampling (equals
  /// ess() when no terminal resampling happened).
  double terminal_ess = 0.0;

  std::size_t size() const { return particles.size(); }

  std::vector<double> log_weights() const {
    std::vector<double> lw(particles.size());
    for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = particles[i].log_weight;
    return lw;
  }

  std::vector<double> normalized_weights() const { return normalize_log_weights(log_weights()); }

  double ess() const {
    const auto w = normalized_weights();
    return eds::ess(w);
  }

  std::vector<Vec> positions() const {
    std::vector<Vec> xs;
    xs.reserve(particles.size());
    for (const auto& p : particles) xs.push_back(p.x);
    return xs;
  }
};

enum class ResampleLabels {
  kFresh,    // offspring trajectory_id = slot index
  kInherit,  // offspring keep the parent's trajectory_id
};

/// Offspring parent indices by stratified resampling: one uniform per stratum
/// [i/n, (i+1)/n). Each parent gets floor(n w_i) or ceil(n w_i) offspring.
inline std::vector<std::size_t> stratified_indices(std::span<const double> normalized_weights,
                                                   CounterRng& rng) {
  const std::size_t n = normalized_weights.size();
  std::vector<std::size_t> idx(n);
  double cumulative = normalized_weights.empty() ? 0.0 : normalized_weights[0];
  std::size_t j = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = (static_cast<double>(i) + rng.uniform()) / static_cast<double>(n);
    while (u >= cumulative && j + 1 < n) {
      ++j;
      cumulative += normalized_weights[j];
    }
    while (normalized_weights[j] <= 0.0 && j > 0) --j;
    idx[i] = j;
  }
  return idx;
}

inline WeightedEnsemble stratified_resample(const WeightedEnsemble& ensemble, CounterRng& rng,
                                            ResampleLabels labels = ResampleLabels::kFresh) {
  const auto w = ensemble.normalized_weights();
  const auto idx = stratified_indices(w, rng);
  WeightedEnsemble out;
  out.window_index = ensemble.window_index;
  out.t = ensemble.t;
  out.step_log = ensemble.step_log;
  out.warnings = ensemble.warnings;
  out.terminal_ess = static_cast<double>(idx.size());
  out.particles.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& parent = ensemble.particles[idx[i]];
    Particle child;
    child.x = parent.x;
    child.log_weight = 0.0;
    child.ancestor_id = parent.trajectory_id;
    child.trajectory_id =
        labels == ResampleLabels::kFresh ? static_cast<std::int64_t>(i) : parent.trajectory_id;
    out.particles.push_back(std::move(child));
  }
  return out;
}

inline std::vector<std::size_t> offspring_counts(std::span<const std::size_t> indices, std::size_t n) {
  std::vector<std::size_t> c(n, 0);
  for (auto i : indices) ++c[i];
  return c;
}

/// Replicates every particle `factor` times. Copies keep the log-weight and
/// trajectory_id (the cluster label); the caller gives them independent
/// noise afterwards.
inline WeightedEnsemble late_branch(const WeightedEnsemble& ensemble, double t_end, std::size_t factor) {
  if (factor < 1) throw std::invalid_argument("late_branch: factor must be >= 1");
  if (ensemble.t >= t_end) throw std::invalid_argument("late_branch: cannot branch after the final step");
  if (factor == 1) return ensemble;
  WeightedEnsemble out = ensemble;
  out.particles.clear();
  out.particles.reserve(ensemble.size() * factor);
  for (const auto& p : ensemble.particles) {
    for (std::size_t b = 0; b < factor; ++b) out.particles.push_back(p);
  }
  return out;
}

}  // namespace eds
