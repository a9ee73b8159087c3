#pragma once

#include <cmath>
#include <stdexcept>

namespace eds {

/// Variance-preserving corruption schedule in reverse (denoising) time:
/// t = 0 is pure noise, t = 1 is data. The rate is linear in t, from
/// beta_max at the noise end down to beta_min at the data end, so
///   alpha(t) = exp(-1/2 * int_t^1 beta),  s(t)^2 = 1 - alpha(t)^2.
/// The forward drift is f_t(x) = -beta(t)/2 * x and diffusion sigma_t = sqrt(beta(t)).
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(double beta_min, double beta_max, double epsilon)
      : beta_min_(beta_min), beta_max_(beta_max), epsilon_(epsilon) {
    if (!(beta_min > 0.0) || !(beta_max >= beta_min) || !std::isfinite(beta_max)) {
      throw std::invalid_argument("NoiseSchedule: need 0 < beta_min <= beta_max");
    }
    if (!(epsilon > 0.0) || !(epsilon < 0.5)) {
      throw std::invalid_argument("NoiseSchedule: epsilon must lie in (0, 0.5)");
    }
  }

  double beta_min() const noexcept { return beta_min_; }
  double beta_max() const noexcept { return beta_max_; }
  double epsilon() const noexcept { return epsilon_; }
  /// Last integration time; the score blows up at t = 1.
  double t_end() const noexcept { return 1.0 - epsilon_; }

  double beta(double t) const noexcept { return beta_max_ - (beta_max_ - beta_min_) * t; }

  /// int_t^1 beta(r) dr
  double integrated_beta(double t) const noexcept {
    const double u = 1.0 - t;
    return beta_max_ * u - 0.5 * (beta_max_ - beta_min_) * (1.0 - t * t);
  }

  double alpha(double t) const noexcept { return std::exp(-0.5 * integrated_beta(t)); }
  double noise_variance(double t) const noexcept { return -std::expm1(-integrated_beta(t)); }
  double noise_level(double t) const noexcept { return std::sqrt(noise_variance(t)); }

  /// f_t(x) = drift_rate(t) * x
  double drift_rate(double t) const noexcept { return -0.5 * beta(t); }
  double diffusion(double t) const noexcept { return std::sqrt(beta(t)); }

 private:
  double beta_min_ = 0.1;
  double beta_max_ = 20.0;
  double epsilon_ = 1e-3;
};

}  // namespace eds
