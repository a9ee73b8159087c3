#pragma once

#include "eds/collective_variable.hpp"
#include "eds/types.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <variant>
#include <vector>

namespace eds {

class BiasPotential;

struct ZeroBias {};

/// b = slope * (xi - 1/2) when centered, else slope * xi.
struct LinearTilt {
  double slope = 0.0;
  CollectiveVariable cv;
  bool centered = false;
};

/// b = slope * clamp(xi, c_min, c_max)
struct ClampedLinear {
  double slope = 0.0;
  double c_min = 0.0;
  double c_max = 1.0;
  CollectiveVariable cv;
};

/// b = kappa/2 * (xi - center)^2
struct Harmonic {
  double center = 0.0;
  double stiffness = 1.0;
  CollectiveVariable cv;
};

struct Hill {
  double center = 0.0;
  double amplitude = 0.0;
};

/// Cubic Hermite table of a 1D function of xi on a uniform grid.
struct HillTable {
  double lo = 0.0;
  double hi = 0.0;
  double step = 1.0;
  std::vector<double> value;
  std::vector<double> slope;
};

/// b = sum_m a_m K_sigma(xi; mu_m) with the density-normalised kernel
/// K_sigma(xi; mu) = exp(-(xi - mu)^2 / (2 sigma^2)) / (sqrt(2 pi) sigma).
/// An amplitude is therefore a kernel mass; the peak height of one hill is
/// a_m / (sqrt(2 pi) sigma). Deposition is append-only.
class HillSum {
 public:
  HillSum() = default;
  HillSum(double width, CollectiveVariable cv) : width_(width), cv_(std::move(cv)) {
    if (!(width > 0.0)) throw std::invalid_argument("HillSum: width must be > 0");
  }

  double width() const noexcept { return width_; }
  const CollectiveVariable& cv() const noexcept { return cv_; }
  const std::vector<Hill>& hills() const noexcept { return hills_; }
  std::size_t size() const noexcept { return hills_.size(); }

  void deposit(double center, double amplitude) {
    hills_.push_back({center, amplitude});
    table_.reset();
  }

  static double kernel(double xi, double mu, double sigma) {
    const double z = (xi - mu) / sigma;
    return std::exp(-0.5 * z * z) / (std::sqrt(2.0 * std::numbers::pi) * sigma);
  }

  /// Exact sum over hills: value and d/dxi.
  std::pair<double, double> exact(double xi) const {
    double v = 0.0;
    double dv = 0.0;
    const double inv_var = 1.0 / (width_ * width_);
    for (const auto& h : hills_) {
      const double k = h.amplitude * kernel(xi, h.center, width_);
      v += k;
      dv -= k * (xi - h.center) * inv_var;
    }
    return {v, dv};
  }

  /// Value and derivative in xi, through the table when one is attached and
  /// xi lies inside it.
  std::pair<double, double> in_cv(double xi) const {
    if (table_ && xi >= table_->lo && xi <= table_->hi) return interpolate(*table_, xi);
    return exact(xi);
  }

  /// Copy whose evaluation goes through a Hermite table over [lo, hi]. The
  /// table nodes hold exact values and slopes.
  HillSum tabulated(double lo, double hi, std::size_t n_nodes = 4097) const {
    if (!(hi > lo) || n_nodes < 2) throw std::invalid_argument("HillSum::tabulated: bad range");
    HillSum copy = *this;
    auto t = std::make_shared<HillTable>();
    t->lo = lo;
    t->hi = hi;
    t->step = (hi - lo) / static_cast<double>(n_nodes - 1);
    t->value.resize(n_nodes);
    t->slope.resize(n_nodes);
    for (std::size_t i = 0; i < n_nodes; ++i) {
      const auto [v, dv] = exact(lo + t->step * static_cast<double>(i));
      t->value[i] = v;
      t->slope[i] = dv;
    }
    copy.table_ = std::move(t);
    return copy;
  }

  bool has_table() const noexcept { return static_cast<bool>(table_); }

 private:
  static std::pair<double, double> interpolate(const HillTable& t, double xi) {
    const double u = (xi - t.lo) / t.step;
    auto i = static_cast<std::size_t>(u);
    if (i >= t.value.size() - 1) i = t.value.size() - 2;
    const double s = u - static_cast<double>(i);
    const double h = t.step;
    const double p0 = t.value[i], p1 = t.value[i + 1];
    const double m0 = t.slope[i] * h, m1 = t.slope[i + 1] * h;
    const double s2 = s * s, s3 = s2 * s;
    const double v = (2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * m0 + (-2 * s3 + 3 * s2) * p1 +
                     (s3 - s2) * m1;
    const double dv = ((6 * s2 - 6 * s) * p0 + (3 * s2 - 4 * s + 1) * m0 + (-6 * s2 + 6 * s) * p1 +
                       (3 * s2 - 2 * s) * m1) /
                      h;
    return {v, dv};
  }

  double width_ = 1.0;
  CollectiveVariable cv_;
  std::vector<Hill> hills_;
  std::shared_ptr<const HillTable> table_;
};

struct SumOfBiases {
  std::vector<BiasPotential> terms;
};

struct BiasEval {
  double value = 0.0;
  Vec gradient;
};

/// Differentiable bias b(x) in k_BT; the biased ensemble is q ~ p e^{-b}.
class BiasPotential {
 public:
  using Kind = std::variant<ZeroBias, LinearTilt, ClampedLinear, Harmonic, HillSum, SumOfBiases>;

  BiasPotential() = default;
  template <class T>
    requires std::is_constructible_v<Kind, T>
  BiasPotential(T kind) : kind_(std::move(kind)) {}  // NOLINT(google-explicit-constructor)

  static BiasPotential zero() { return ZeroBias{}; }
  static BiasPotential linear_tilt(double slope, CollectiveVariable cv = {}, bool centered = false) {
    return LinearTilt{slope, std::move(cv), centered};
  }
  static BiasPotential clamped_linear(double slope, double c_min, double c_max, CollectiveVariable cv = {}) {
    if (!(c_max > c_min)) throw std::invalid_argument("ClampedLinear: need c_max > c_min");
    return ClampedLinear{slope, c_min, c_max, std::move(cv)};
  }
  static BiasPotential harmonic(double center, double stiffness, CollectiveVariable cv = {}) {
    if (!(stiffness > 0.0)) throw std::invalid_argument("Harmonic: stiffness must be > 0");
    return Harmonic{center, stiffness, std::move(cv)};
  }

  const Kind& kind() const noexcept { return kind_; }
  Kind& kind() noexcept { return kind_; }

  double value(const Vec& x) const {
    return std::visit([&](const auto& k) { return value_of(k, x); }, kind_);
  }

  BiasEval eval(const Vec& x) const {
    BiasEval out{0.0, Vec::Zero(x.size())};
    std::visit([&](const auto& k) { accumulate(k, x, out); }, kind_);
    return out;
  }

 private:
  static double value_of(const ZeroBias&, const Vec&) { return 0.0; }
  static double value_of(const LinearTilt& b, const Vec& x) {
    const double xi = b.cv.value(x);
    return b.slope * (b.centered ? xi - 0.5 : xi);
  }
  static double value_of(const ClampedLinear& b, const Vec& x) {
    return b.slope * std::clamp(b.cv.value(x), b.c_min, b.c_max);
  }
  static double value_of(const Harmonic& b, const Vec& x) {
    const double d = b.cv.value(x) - b.center;
    return 0.5 * b.stiffness * d * d;
  }
  static double value_of(const HillSum& b, const Vec& x) { return b.in_cv(b.cv().value(x)).first; }
  static double value_of(const SumOfBiases& b, const Vec& x) {
    double v = 0.0;
    for (const auto& t : b.terms) v += t.value(x);
    return v;
  }

  static void accumulate(const ZeroBias&, const Vec&, BiasEval&) {}
  static void accumulate(const LinearTilt& b, const Vec& x, BiasEval& out) {
    out.value += value_of(b, x);
    out.gradient(b.cv.axis()) += b.slope * b.cv.derivative(x);
  }
  static void accumulate(const ClampedLinear& b, const Vec& x, BiasEval& out) {
    const double xi = b.cv.value(x);
    out.value += b.slope * std::clamp(xi, b.c_min, b.c_max);
    if (xi > b.c_min && xi < b.c_max) out.gradient(b.cv.axis()) += b.slope * b.cv.derivative(x);
  }
  static void accumulate(const Harmonic& b, const Vec& x, BiasEval& out) {
    const double d = b.cv.value(x) - b.center;
    out.value += 0.5 * b.stiffness * d * d;
    out.gradient(b.cv.axis()) += b.stiffness * d * b.cv.derivative(x);
  }
  static void accumulate(const HillSum& b, const Vec& x, BiasEval& out) {
    const auto [v, dv] = b.in_cv(b.cv().value(x));
    out.value += v;
    out.gradient(b.cv().axis()) += dv * b.cv().derivative(x);
  }
  static void accumulate(const SumOfBiases& b, const Vec& x, BiasEval& out) {
    for (const auto& t : b.terms) {
      const auto e = t.eval(x);
      out.value += e.value;
      out.gradient += e.gradient;
    }
  }

  Kind kind_{ZeroBias{}};
};

inline BiasEval eval_bias(const BiasPotential& b, const Vec& x) { return b.eval(x); }

enum class Interpolation { kLinear, kSmoothstep };

struct ScheduleEval {
  double value = 0.0;       // b_t(x)
  double time_deriv = 0.0;  // d b_t / dt
  Vec gradient;             // grad b_t(x)
};

/// b_t(x) = lambda(t) b(x) with lambda(0) = 0 and lambda(1) = 1.
class BiasSchedule {
 public:
  BiasSchedule() = default;
  explicit BiasSchedule(BiasPotential bias, Interpolation interp = Interpolation::kLinear)
      : bias_(std::move(bias)), interp_(interp) {}

  const BiasPotential& bias() const noexcept { return bias_; }
  Interpolation interpolation() const noexcept { return interp_; }

  double lambda(double t) const noexcept {
    return interp_ == Interpolation::kLinear ? t : t * t * (3.0 - 2.0 * t);
  }
  double lambda_deriv(double t) const noexcept {
    return interp_ == Interpolation::kLinear ? 1.0 : 6.0 * t * (1.0 - t);
  }

  ScheduleEval eval(double t, const Vec& x) const {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("BiasSchedule: t must lie in [0, 1]");
    const auto b = bias_.eval(x);
    const double l = lambda(t);
    return {l * b.value, lambda_deriv(t) * b.value, l * b.gradient};
  }

 private:
  BiasPotential bias_;
  Interpolation interp_ = Interpolation::kLinear;
};

inline ScheduleEval eval_schedule(const BiasSchedule& s, double t, const Vec& x) { return s.eval(t, x); }

}  // namespace eds
