#pragma once

#include "eds/collective_variable.hpp"
#include "eds/gaussian_mixture.hpp"
#include "eds/pmf.hpp"
#include "eds/types.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace eds {

// Masses are integrated piecewise on intervals no wider than one component
// standard deviation, each with adaptive 61-point Gauss-Kronrod, which keeps
// the absolute error on any probability mass far below 1e-10.
inline constexpr double kQuadratureRelTol = 1e-12;
inline constexpr double kMassTolerance = 1e-10;
inline constexpr int kBreakpointSigmas = 12;

using Membership = std::function<double(const Vec&)>;

namespace detail {

inline std::vector<double> sorted_unique(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  std::vector<double> out;
  for (double x : v) {
    if (!std::isfinite(x)) continue;
    if (out.empty() || x - out.back() > 1e-9) out.push_back(x);
  }
  return out;
}

/// Breakpoints clipped to [lo, hi] with both ends included.
inline std::vector<double> clip_breaks(const std::vector<double>& breaks, double lo, double hi) {
  std::vector<double> out{lo};
  for (double b : breaks) {
    if (b > lo && b < hi) out.push_back(b);
  }
  out.push_back(hi);
  return sorted_unique(std::move(out));
}

}  // namespace detail

/// Integrates f over [breaks.front(), breaks.back()], one adaptive
/// Gauss-Kronrod rule per sub-interval.
template <class F>
double integrate_1d(F&& f, const std::vector<double>& breaks, double rel_tol = kQuadratureRelTol,
                    unsigned max_depth = 12) {
  using boost::math::quadrature::gauss_kronrod;
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
    if (!(breaks[i + 1] > breaks[i])) continue;
    total += gauss_kronrod<double, 61>::integrate(f, breaks[i], breaks[i + 1], max_depth, rel_tol);
  }
  return total;
}

template <class F>
double integrate_2d(F&& f, const std::vector<double>& xbreaks, const std::vector<double>& ybreaks,
                    double rel_tol = kQuadratureRelTol) {
  auto inner = [&](double x) {
    return integrate_1d([&](double y) { return f(x, y); }, ybreaks, rel_tol, 6);
  };
  return integrate_1d(inner, xbreaks, rel_tol, 6);
}

/// Breakpoints at every integer number of standard deviations around each
/// component mean along `axis`, plus user-supplied discontinuities.
inline std::vector<double> axis_breakpoints(const GaussianMixture& model, int axis,
                                            std::span<const double> extra = {}) {
  std::vector<double> b(extra.begin(), extra.end());
  double sigma_min = std::numeric_limits<double>::infinity();
  for (const auto& c : model.components()) {
    sigma_min = std::min(sigma_min, std::sqrt(c.covariance(axis, axis)));
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& c : model.components()) {
    const double mu = c.mean(axis);
    const double s = std::sqrt(c.covariance(axis, axis));
    lo = std::min(lo, mu - kBreakpointSigmas * s);
    hi = std::max(hi, mu + kBreakpointSigmas * s);
  }
  // Uniform grid at the narrowest component's scale over the full support.
  const auto n = static_cast<std::size_t>(std::ceil((hi - lo) / sigma_min));
  for (std::size_t i = 0; i <= n; ++i) b.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n));
  auto out = detail::sorted_unique(std::move(b));
  return detail::clip_breaks(out, lo, hi);
}

/// Integral of p(x) * g(x) for a 1D or 2D mixture.
inline double mixture_integral(const GaussianMixture& model, const Membership& g,
                               std::span<const double> extra_x_breaks = {}) {
  const int d = model.dimension();
  const auto& p = model.data();
  if (d == 1) {
    const auto xb = axis_breakpoints(model, 0, extra_x_breaks);
    return integrate_1d(
        [&](double x) {
          const Vec v = scalar_vec(x);
          return std::exp(p.log_density(v)) * g(v);
        },
        xb);
  }
  if (d == 2) {
    const auto xb = axis_breakpoints(model, 0, extra_x_breaks);
    const auto yb = axis_breakpoints(model, 1);
    return integrate_2d(
        [&](double x, double y) {
          const Vec v = make_vec({x, y});
          return std::exp(p.log_density(v)) * g(v);
        },
        xb, yb);
  }
  throw std::invalid_argument("quadrature oracle supports 1D and 2D models only");
}

struct MembershipMasses {
  double inside = 0.0;   // E_p[chi]
  double outside = 0.0;  // E_p[1 - chi]
};

inline MembershipMasses membership_masses(const GaussianMixture& model, const Membership& chi,
                                          std::span<const double> extra_x_breaks = {}) {
  MembershipMasses m;
  m.inside = mixture_integral(model, chi, extra_x_breaks);
  m.outside = mixture_integral(model, [&](const Vec& x) { return 1.0 - chi(x); }, extra_x_breaks);
  return m;
}

/// -log(E_p[chi] / (1 - E_p[chi])) in k_BT. Both masses are integrated
/// directly so a tiny complement keeps full relative precision.
inline double exact_free_energy_difference(const GaussianMixture& model, const Membership& chi,
                                           std::span<const double> extra_x_breaks = {}) {
  const auto m = membership_masses(model, chi, extra_x_breaks);
  if (m.inside < kMassTolerance || m.outside < kMassTolerance) {
    throw std::domain_error("exact_free_energy_difference: membership mass is 0 or 1 within tolerance");
  }
  return -std::log(m.inside / m.outside);
}

/// Indicator of x[axis] < threshold (the A basin of make_double_well).
inline Membership below(double threshold, int axis = 0) {
  return [threshold, axis](const Vec& x) { return x(axis) < threshold ? 1.0 : 0.0; };
}

inline Membership above(double threshold, int axis = 0) {
  return [threshold, axis](const Vec& x) { return x(axis) > threshold ? 1.0 : 0.0; };
}

/// PMF along a collective variable from per-bin masses, -log(mass / width),
/// shifted to a zero minimum. Bins map back to coordinate intervals through
/// the (monotone) CV.
inline PmfEstimate exact_pmf(const GaussianMixture& model, const CollectiveVariable& cv,
                             const std::vector<double>& edges) {
  check_edges(edges);
  const int axis = cv.axis();
  const int d = model.dimension();
  if (d > 2) throw std::invalid_argument("exact_pmf supports 1D and 2D models only");
  const auto full = axis_breakpoints(model, axis);
  const double lo_support = full.front();
  const double hi_support = full.back();

  auto to_coordinate = [&](double xi) {
    if (cv.is_projection()) return xi;
    const auto& s = std::get<SigmoidProgress>(cv.kind());
    if (xi <= 0.0) return -std::numeric_limits<double>::infinity();
    if (xi >= 1.0) return std::numeric_limits<double>::infinity();
    return s.center + s.length_scale * std::log(xi / (1.0 - xi));
  };

  PmfEstimate out;
  out.kind = PmfKind::kExact;
  out.edges = edges;
  out.centers = bin_centers(edges);
  const auto& p = model.data();
  const auto other = (d == 2) ? axis_breakpoints(model, 1 - axis) : std::vector<double>{};
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) {
    const double a = std::max(to_coordinate(edges[i]), lo_support);
    const double b = std::min(to_coordinate(edges[i + 1]), hi_support);
    double mass = 0.0;
    if (b > a) {
      const auto xb = detail::clip_breaks(full, a, b);
      if (d == 1) {
        mass = integrate_1d([&](double x) { return std::exp(p.log_density(scalar_vec(x))); }, xb);
      } else {
        mass = integrate_2d(
            [&](double u, double v) {
              Vec z(2);
              z(axis) = u;
              z(1 - axis) = v;
              return std::exp(p.log_density(z));
            },
            xb, other);
      }
    }
    out.mass.push_back(mass);
    const double width = edges[i + 1] - edges[i];
    out.values.push_back(mass > 0.0 ? -std::log(mass / width) : std::numeric_limits<double>::infinity());
    out.standard_errors.push_back(0.0);
  }
  shift_to_zero_min(out.values);
  return out;
}

}  // namespace eds
