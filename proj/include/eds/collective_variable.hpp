#pragma once

#include "eds/types.hpp"

#include <cmath>
#include <stdexcept>
#include <variant>

namespace eds {

/// xi(x) = x[axis]
struct CoordinateProjection {
  int axis = 0;
};

/// xi(x) = 1 / (1 + exp(-(x[axis] - center) / length_scale)), a progress
/// coordinate in (0, 1) increasing along the axis.
struct SigmoidProgress {
  int axis = 0;
  double center = 0.0;
  double length_scale = 1.0;
};

class CollectiveVariable {
 public:
  CollectiveVariable() = default;
  CollectiveVariable(CoordinateProjection p) : kind_(p) {}  // NOLINT(google-explicit-constructor)
  CollectiveVariable(SigmoidProgress s) : kind_(s) {       // NOLINT(google-explicit-constructor)
    if (!(s.length_scale > 0.0)) throw std::invalid_argument("SigmoidProgress: length_scale must be > 0");
  }

  static CollectiveVariable projection(int axis = 0) { return CoordinateProjection{axis}; }
  static CollectiveVariable sigmoid(int axis, double center, double length_scale) {
    return SigmoidProgress{axis, center, length_scale};
  }

  const auto& kind() const noexcept { return kind_; }
  bool is_projection() const noexcept { return std::holds_alternative<CoordinateProjection>(kind_); }
  int axis() const {
    return std::visit([](const auto& k) { return k.axis; }, kind_);
  }

  double value(const Vec& x) const {
    if (const auto* p = std::get_if<CoordinateProjection>(&kind_)) return x(p->axis);
    const auto& s = std::get<SigmoidProgress>(kind_);
    return logistic((x(s.axis) - s.center) / s.length_scale);
  }

  /// Derivative with respect to the projected coordinate.
  double derivative(const Vec& x) const {
    if (std::holds_alternative<CoordinateProjection>(kind_)) return 1.0;
    const auto& s = std::get<SigmoidProgress>(kind_);
    const double v = logistic((x(s.axis) - s.center) / s.length_scale);
    return v * (1.0 - v) / s.length_scale;
  }

  Vec gradient(const Vec& x) const {
    Vec g = Vec::Zero(x.size());
    g(axis()) = derivative(x);
    return g;
  }

 private:
  static double logistic(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
  }

  std::variant<CoordinateProjection, SigmoidProgress> kind_{CoordinateProjection{0}};
};

}  // namespace eds
