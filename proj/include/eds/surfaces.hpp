#pragma once

#include "eds/gaussian_mixture.hpp"
#include "eds/types.hpp"

#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

namespace eds {

inline constexpr double kDefaultWellSeparation = 2.0;
inline constexpr double kDefaultWellWidth = 0.125;

/// Two-basin 1D mixture. Basin A sits at -separation/2, basin B at
/// +separation/2, both with standard deviation `width`, and the weights
/// satisfy -log(pi_B / pi_A) = -delta_g, so delta_g < 0 makes B the rare basin
/// and -log(P[A] / P[B]) = delta_g.
inline GaussianMixture make_double_well(double delta_g, double separation = kDefaultWellSeparation,
                                        double width = kDefaultWellWidth) {
  if (!std::isfinite(delta_g)) throw std::invalid_argument("make_double_well: delta_g must be finite");
  if (!(width > 0.0)) throw std::invalid_argument("make_double_well: width must be > 0");
  if (!(separation > 2.0 * width)) {
    throw std::invalid_argument("make_double_well: separation must exceed 2*width (basins not distinct)");
  }
  // pi_A = 1 / (1 + e^dg), pi_B = e^dg / (1 + e^dg), written to stay accurate
  // for large |dg|.
  const double pi_b = delta_g <= 0.0 ? std::exp(delta_g) / (1.0 + std::exp(delta_g))
                                     : 1.0 / (1.0 + std::exp(-delta_g));
  const double pi_a = 1.0 - pi_b;
  Mat cov(1, 1);
  cov(0, 0) = width * width;
  return GaussianMixture({{pi_a, scalar_vec(-0.5 * separation), cov},
                          {pi_b, scalar_vec(0.5 * separation), cov}});
}

/// Slope a of b(x) = a * x[axis] that equalises the masses of components 0
/// and 1. Exact for two components with equal variance along the axis.
inline double equalizing_slope(const GaussianMixture& model, int axis = 0) {
  const auto comps = model.components();
  if (comps.size() != 2) throw std::invalid_argument("equalizing_slope: need two components");
  const double dmu = comps[0].mean(axis) - comps[1].mean(axis);
  return (std::log(comps[0].weight) - std::log(comps[1].weight)) / dmu;
}

/// Location of the density minimum of the axis marginal between the means of
/// components 0 and 1.
inline double barrier_location(const GaussianMixture& model, int axis = 0) {
  const auto comps = model.components();
  if (comps.size() < 2) throw std::invalid_argument("barrier_location: need two components");
  const GaussianMixture m = model.marginal(axis);
  double lo = comps[0].mean(axis);
  double hi = comps[1].mean(axis);
  if (lo > hi) std::swap(lo, hi);
  auto neg_log = [&m](double x) { return -m.log_density(scalar_vec(x)); };
  // Maximise the free energy along the axis.
  auto r = boost::math::tools::brent_find_minima([&](double x) { return -neg_log(x); }, lo, hi, 50);
  return r.first;
}

enum class SurfaceKind { kMixture, kTwoState, kThreeState };

inline std::string_view to_string(SurfaceKind k) {
  switch (k) {
    case SurfaceKind::kMixture: return "mixture";
    case SurfaceKind::kTwoState: return "two-state";
    case SurfaceKind::kThreeState: return "three-state";
  }
  return "?";
}

inline SurfaceKind parse_surface_kind(std::string_view s) {
  if (s == "mixture") return SurfaceKind::kMixture;
  if (s == "two-state") return SurfaceKind::kTwoState;
  if (s == "three-state") return SurfaceKind::kThreeState;
  throw ConfigError("unknown surface '" + std::string(s) + "'");
}

namespace detail {

inline Mat diag2(double sx, double sy) {
  Mat m = Mat::Zero(2, 2);
  m(0, 0) = sx * sx;
  m(1, 1) = sy * sy;
  return m;
}

}  // namespace detail

/// Two basins joined along x.
inline GaussianMixture two_state_surface() {
  return GaussianMixture({{0.6, make_vec({-1.5, 0.0}), detail::diag2(0.45, 0.45)},
                          {0.4, make_vec({1.5, 0.0}), detail::diag2(0.45, 0.45)}});
}

/// The two-state surface plus a third well off the x path (top right),
/// separated from the path by a high barrier in y.
inline GaussianMixture three_state_surface() {
  return GaussianMixture({{0.45, make_vec({-1.5, 0.0}), detail::diag2(0.45, 0.45)},
                          {0.30, make_vec({1.5, 0.0}), detail::diag2(0.45, 0.45)},
                          {0.25, make_vec({0.4, 3.2}), detail::diag2(0.35, 0.3)}});
}

/// Energy surface u(x) = -log p(x) on which the Langevin baseline runs.
struct PotentialSurface {
  SurfaceKind kind = SurfaceKind::kMixture;
  GaussianMixture mixture;

  double energy(const Vec& x) const { return mixture.energy(x); }
  Vec gradient(const Vec& x) const { return mixture.energy_gradient(x); }
};

inline PotentialSurface make_surface(SurfaceKind kind, const GaussianMixture& mixture = {}) {
  switch (kind) {
    case SurfaceKind::kTwoState: return {kind, two_state_surface()};
    case SurfaceKind::kThreeState: return {kind, three_state_surface()};
    case SurfaceKind::kMixture: break;
  }
  if (mixture.components().empty()) throw std::invalid_argument("make_surface: mixture required");
  return {kind, mixture};
}

}  // namespace eds
