#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace eds {

enum class PmfKind { kHistogram, kKernel, kBias, kExact };

/// Free energy profile along a collective variable, in k_BT, shifted so the
/// smallest finite value is 0. Empty bins carry +inf with NaN standard error.
struct PmfEstimate {
  PmfKind kind = PmfKind::kHistogram;
  std::vector<double> edges;    // bin edges (histogram/exact); empty for grid estimates
  std::vector<double> centers;  // bin centres or evaluation grid
  std::vector<double> values;
  std::vector<double> standard_errors;
  std::vector<double> mass;     // per-bin probability (histogram/exact)

  std::size_t size() const { return centers.size(); }
};

inline void shift_to_zero_min(std::vector<double>& values) {
  double m = std::numeric_limits<double>::infinity();
  for (double v : values) {
    if (std::isfinite(v)) m = std::min(m, v);
  }
  if (!std::isfinite(m)) return;
  for (double& v : values) v -= m;
}

inline void check_edges(const std::vector<double>& edges) {
  if (edges.size() < 3) throw std::invalid_argument("PMF grid needs at least 2 bins");
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw std::invalid_argument("PMF grid must be strictly increasing");
  }
}

inline std::vector<double> uniform_edges(double lo, double hi, std::size_t n_bins) {
  if (n_bins < 2 || !(hi > lo)) throw std::invalid_argument("uniform_edges: need hi > lo and >= 2 bins");
  std::vector<double> e(n_bins + 1);
  for (std::size_t i = 0; i <= n_bins; ++i) {
    e[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_bins);
  }
  return e;
}

inline std::vector<double> bin_centers(const std::vector<double>& edges) {
  std::vector<double> c(edges.size() - 1);
  for (std::size_t i = 0; i + 1 < edges.size(); ++i) c[i] = 0.5 * (edges[i] + edges[i + 1]);
  return c;
}

}  // namespace eds
