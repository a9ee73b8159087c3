#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace eds {

// States live in at most three dimensions, so vectors never touch the heap.
inline constexpr int kMaxDim = 3;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor,
                          kMaxDim, kMaxDim>;

// k_B T at 300 K.
inline constexpr double kKcalPerKbt300 = 0.59248;

inline double kbt_to_kcal(double dg_kbt, double kcal_per_kbt = kKcalPerKbt300) {
  return dg_kbt * kcal_per_kbt;
}

inline Vec make_vec(std::initializer_list<double> values) {
  Vec v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v(i++) = x;
  return v;
}

inline Vec scalar_vec(double x) {
  Vec v(1);
  v(0) = x;
  return v;
}

/// Invalid user configuration (bad parameter combination, unknown key).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A run produced non-finite state or failed to converge.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eds
