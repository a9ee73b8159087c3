#pragma once

#include "eds/bias.hpp"
#include "eds/ensemble.hpp"
#include "eds/types.hpp"

#include <Eigen/Dense>
#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace eds {

struct MbarOptions {
  double tolerance = 1e-10;
  std::size_t max_iter = 100000;
  /// External effective counts replacing ESS_k as window masses.
  std::optional<std::vector<double>> masses;
  /// Off-diagonal overlap below which states count as disconnected.
  double overlap_floor = 0.01;
};

/// All samples of K windows pooled, with reduced bias energies of every
/// sample in every state.
struct PooledSamples {
  std::vector<Vec> x;
  std::vector<double> log_weight;        // steering log-weights
  std::vector<int> window;               // 0-based sampled state
  std::vector<std::int64_t> trajectory;  // trajectory_id within its window
  Eigen::MatrixXd bias;                  // N x K, b_k(x_n)
  std::size_t n_states = 0;

  std::size_t size() const { return x.size(); }
};

inline PooledSamples pool(std::span<const WeightedEnsemble> ensembles, std::span<const BiasPotential> biases) {
  if (ensembles.empty()) throw std::invalid_argument("mbar: need at least one state");
  if (ensembles.size() != biases.size()) throw std::invalid_argument("mbar: one bias per ensemble required");
  PooledSamples p;
  p.n_states = ensembles.size();
  std::size_t n = 0;
  for (const auto& e : ensembles) {
    if (e.particles.empty()) throw std::invalid_argument("mbar: empty ensemble");
    n += e.size();
  }
  p.x.reserve(n);
  p.bias.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p.n_states));
  for (std::size_t k = 0; k < ensembles.size(); ++k) {
    for (const auto& q : ensembles[k].particles) {
      p.x.push_back(q.x);
      p.log_weight.push_back(q.log_weight);
      p.window.push_back(static_cast<int>(k));
      p.trajectory.push_back(q.trajectory_id);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < p.n_states; ++k) {
      const double b = biases[k].value(p.x[i]);
      if (!std::isfinite(b)) throw std::invalid_argument("mbar: non-finite bias value on pooled sample");
      p.bias(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = b;
    }
  }
  return p;
}

/// Per-sample effective masses alpha_{k,i} = M_k w_i / sum_{j in k} w_j.
/// With M_k = ESS_k they sum to the window ESS.
struct EffectiveMasses {
  std::vector<double> alpha;
  std::vector<double> ess;     // per window
  std::vector<double> masses;  // M_k actually used
};

/// `multiplicity` (bootstrap counts) scales each sample's weight; empty means 1.
inline EffectiveMasses effective_masses(const PooledSamples& p, const std::optional<std::vector<double>>& masses,
                                        std::span<const double> multiplicity = {}) {
  const std::size_t K = p.n_states;
  const std::size_t N = p.size();
  std::vector<double> max_lw(K, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < N; ++i) max_lw[p.window[i]] = std::max(max_lw[p.window[i]], p.log_weight[i]);
  std::vector<double> w(N);
  std::vector<double> s(K, 0.0);
  std::vector<double> s2(K, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    const int k = p.window[i];
    const double c = multiplicity.empty() ? 1.0 : multiplicity[i];
    const double wi = std::exp(p.log_weight[i] - max_lw[k]);
    w[i] = c * wi;
    s[k] += c * wi;
    s2[k] += c * wi * wi;
  }
  EffectiveMasses m;
  m.ess.resize(K);
  m.masses.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    if (!(s[k] > 0.0)) throw std::invalid_argument("mbar: window with zero total weight");
    m.ess[k] = s[k] * s[k] / s2[k];
    m.masses[k] = masses ? (*masses)[k] : m.ess[k];
    if (!(m.masses[k] > 0.0)) throw std::invalid_argument("mbar: window masses must be > 0");
  }
  m.alpha.resize(N);
  for (std::size_t i = 0; i < N; ++i) m.alpha[i] = m.masses[p.window[i]] * w[i] / s[p.window[i]];
  return m;
}

struct MbarResult {
  Eigen::VectorXd f;                  // reduced free energies, f(0) = 0
  std::vector<double> log_denominator;  // log sum_l M_l exp(f_l - b_l(x_n))
  EffectiveMasses masses;
  std::size_t iterations = 0;
  double residual = 0.0;
  bool converged = false;
  std::vector<std::string> warnings;
  std::shared_ptr<const PooledSamples> samples;

  std::size_t n_states() const { return static_cast<std::size_t>(f.size()); }
};

namespace detail {

/// Row-shifted Boltzmann factors E_nk = exp(-b_nk + min_l b_nl) in [0, 1].
inline Eigen::MatrixXd shifted_factors(const Eigen::MatrixXd& bias) {
  Eigen::MatrixXd e(bias.rows(), bias.cols());
  for (Eigen::Index n = 0; n < bias.rows(); ++n) {
    const double m = bias.row(n).minCoeff();
    for (Eigen::Index k = 0; k < bias.cols(); ++k) e(n, k) = std::exp(-(bias(n, k) - m));
  }
  return e;
}

/// One application of the fixed-point map, gauge-fixed to f(0) = 0.
inline Eigen::VectorXd fixed_point_map(const Eigen::MatrixXd& e, std::span<const double> alpha,
                                       const std::vector<double>& masses, const Eigen::VectorXd& f) {
  const Eigen::Index K = f.size();
  Eigen::VectorXd s(K);
  for (Eigen::Index l = 0; l < K; ++l) s(l) = std::log(masses[l]) + f(l);
  const double smax = s.maxCoeff();
  const Eigen::VectorXd c = (s.array() - smax).exp().matrix();
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(K);
  for (Eigen::Index n = 0; n < e.rows(); ++n) {
    if (alpha[n] == 0.0) continue;
    const double denom = e.row(n).dot(c);
    acc.noalias() += (alpha[n] / denom) * e.row(n).transpose();
  }
  Eigen::VectorXd out(K);
  for (Eigen::Index k = 0; k < K; ++k) out(k) = smax - std::log(acc(k));
  out.array() -= out(0);
  return out;
}

inline std::vector<double> log_denominators(const Eigen::MatrixXd& bias, const std::vector<double>& masses,
                                            const Eigen::VectorXd& f) {
  std::vector<double> out(static_cast<std::size_t>(bias.rows()));
  std::vector<double> terms(masses.size());
  for (Eigen::Index n = 0; n < bias.rows(); ++n) {
    for (std::size_t l = 0; l < masses.size(); ++l) {
      terms[l] = std::log(masses[l]) + f(static_cast<Eigen::Index>(l)) - bias(n, static_cast<Eigen::Index>(l));
    }
    const double m = *std::max_element(terms.begin(), terms.end());
    double s = 0.0;
    for (double t : terms) s += std::exp(t - m);
    out[static_cast<std::size_t>(n)] = m + std::log(s);
  }
  return out;
}

}  // namespace detail

/// Damped self-consistent iteration for the weighted MBAR free energies.
inline MbarResult mbar_solve(std::shared_ptr<const PooledSamples> samples, const MbarOptions& opts = {},
                             std::span<const double> multiplicity = {},
                             const std::optional<Eigen::VectorXd>& f_init = std::nullopt) {
  const PooledSamples& p = *samples;
  const auto K = static_cast<Eigen::Index>(p.n_states);
  if (opts.masses && opts.masses->size() != p.n_states) {
    throw std::invalid_argument("mbar: masses override must have one entry per state");
  }
  MbarResult r;
  r.samples = samples;
  r.masses = effective_masses(p, opts.masses, multiplicity);
  const Eigen::MatrixXd e = detail::shifted_factors(p.bias);

  Eigen::VectorXd f = f_init ? *f_init : Eigen::VectorXd::Zero(K);
  double damping = 1.0;
  double prev_residual = std::numeric_limits<double>::infinity();
  std::size_t rises = 0;
  for (std::size_t it = 1; it <= opts.max_iter; ++it) {
    const Eigen::VectorXd g = detail::fixed_point_map(e, r.masses.alpha, r.masses.masses, f);
    if (!g.allFinite()) throw NumericalError("mbar: fixed-point iteration diverged (non-finite free energies)");
    const double residual = (g - f).cwiseAbs().maxCoeff();
    r.iterations = it;
    r.residual = residual;
    if (residual < opts.tolerance) {
      f = g;
      r.converged = true;
      break;
    }
    if (residual > prev_residual && ++rises >= 3 && damping == 1.0) damping = 0.5;
    prev_residual = residual;
    f += damping * (g - f);
  }
  if (!r.converged) {
    r.warnings.push_back("mbar: not converged after " + std::to_string(r.iterations) +
                         " iterations (residual " + std::to_string(r.residual) + ")");
  }
  r.f = f;
  r.log_denominator = detail::log_denominators(p.bias, r.masses.masses, f);
  return r;
}

inline MbarResult mbar_solve(std::span<const WeightedEnsemble> ensembles, std::span<const BiasPotential> biases,
                             const MbarOptions& opts = {}) {
  return mbar_solve(std::make_shared<const PooledSamples>(pool(ensembles, biases)), opts);
}

/// Plugs f into the fixed-point map and returns max_k |map(f)_k - f_k|.
inline double self_consistency_residual(const MbarResult& r) {
  const Eigen::MatrixXd e = detail::shifted_factors(r.samples->bias);
  const auto g = detail::fixed_point_map(e, r.masses.alpha, r.masses.masses, r.f);
  return (g - r.f).cwiseAbs().maxCoeff();
}

/// log W_n^(a) = log alpha_n - b_a(x_n) - log D_n, with b_a the supplied
/// per-sample target bias values.
inline std::vector<double> target_log_weights(const MbarResult& r, std::span<const double> target_bias) {
  const std::size_t N = r.samples->size();
  std::vector<double> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    const double b = target_bias.empty() ? 0.0 : target_bias[n];
    out[n] = r.masses.alpha[n] > 0.0 ? std::log(r.masses.alpha[n]) - b - r.log_denominator[n]
                                     : -std::numeric_limits<double>::infinity();
  }
  return out;
}

/// Target weights for state a: a = 0 is the unbiased state, a = k >= 1 the
/// k-th sampled state. Normalised to sum 1.
inline std::vector<double> target_weights(const MbarResult& r, std::size_t a) {
  if (a > r.n_states()) throw std::out_of_range("target_weights: state index out of range");
  std::vector<double> lw;
  if (a == 0) {
    lw = target_log_weights(r, {});
  } else {
    const auto col = r.samples->bias.col(static_cast<Eigen::Index>(a - 1));
    std::vector<double> b(col.data(), col.data() + col.size());
    lw = target_log_weights(r, b);
  }
  return normalize_log_weights(lw);
}

struct OverlapReport {
  Eigen::MatrixXd matrix;
  bool connected = true;
  std::vector<std::size_t> component;  // component label per state
};

/// O_ij = M_j sum_n W^(i)_n W^(j)_n / alpha_n with W^(i) the normalised target
/// weights of sampled state i. Rows sum to 1 at the fixed point.
inline OverlapReport overlap_matrix(const MbarResult& r, double floor = 0.01) {
  const std::size_t K = r.n_states();
  const std::size_t N = r.samples->size();
  Eigen::MatrixXd w(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(K));
  for (std::size_t k = 0; k < K; ++k) {
    const auto wk = target_weights(r, k + 1);
    for (std::size_t n = 0; n < N; ++n) w(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k)) = wk[n];
  }
  OverlapReport rep;
  rep.matrix = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(K));
  for (std::size_t n = 0; n < N; ++n) {
    const double a = r.masses.alpha[n];
    if (a <= 0.0) continue;
    const auto row = w.row(static_cast<Eigen::Index>(n));
    rep.matrix.noalias() += (row.transpose() * row) / a;
  }
  for (std::size_t j = 0; j < K; ++j) rep.matrix.col(static_cast<Eigen::Index>(j)) *= r.masses.masses[j];

  // Connected components over edges with overlap >= floor in either direction.
  rep.component.assign(K, K);
  std::size_t label = 0;
  for (std::size_t s = 0; s < K; ++s) {
    if (rep.component[s] != K) continue;
    std::vector<std::size_t> stack{s};
    rep.component[s] = label;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      for (std::size_t j = 0; j < K; ++j) {
        if (rep.component[j] != K) continue;
        const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
        if (std::max(rep.matrix(ii, jj), rep.matrix(jj, ii)) >= floor) {
          rep.component[j] = label;
          stack.push_back(j);
        }
      }
    }
    ++label;
  }
  rep.connected = (label == 1);
  return rep;
}

/// Bennett acceptance ratio for two states on weighted samples: solves
/// sum_{i in 1} alpha_i fermi(log(M1/M2) + db_i - df)
///   = sum_{j in 2} alpha_j fermi(-log(M1/M2) - db_j + df)
/// for df = f_2 - f_1, with db = b_2 - b_1.
inline double bar(std::span<const double> db_1, std::span<const double> alpha_1, double m1,
                  std::span<const double> db_2, std::span<const double> alpha_2, double m2,
                  double tolerance = 1e-13) {
  auto fermi = [](double z) { return z > 0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z)); };
  const double lr = std::log(m1 / m2);
  auto g = [&](double df) {
    double lhs = 0.0;
    double rhs = 0.0;
    for (std::size_t i = 0; i < db_1.size(); ++i) lhs += alpha_1[i] * fermi(lr + db_1[i] - df);
    for (std::size_t j = 0; j < db_2.size(); ++j) rhs += alpha_2[j] * fermi(-lr - db_2[j] + df);
    return lhs - rhs;
  };
  // g increases with df; bracket by expanding.
  double lo = -1.0, hi = 1.0;
  while (g(lo) > 0.0) lo *= 2.0;
  while (g(hi) < 0.0) hi *= 2.0;
  std::uintmax_t it = 200;
  auto tol = [tolerance](double a, double b) { return std::abs(b - a) < tolerance; };
  const auto [a, b] = boost::math::tools::toms748_solve(g, lo, hi, tol, it);
  return 0.5 * (a + b);
}

/// BAR on the first two states of a pooled MBAR problem (same masses).
inline double bar(const MbarResult& r) {
  const PooledSamples& p = *r.samples;
  if (p.n_states != 2) throw std::invalid_argument("bar: need exactly two states");
  std::vector<double> d1, a1, d2, a2;
  for (std::size_t n = 0; n < p.size(); ++n) {
    const double db = p.bias(static_cast<Eigen::Index>(n), 1) - p.bias(static_cast<Eigen::Index>(n), 0);
    (p.window[n] == 0 ? d1 : d2).push_back(db);
    (p.window[n] == 0 ? a1 : a2).push_back(r.masses.alpha[n]);
  }
  return bar(d1, a1, r.masses.masses[0], d2, a2, r.masses.masses[1]);
}

/// Asymptotic covariance of f (Kong et al. form, with sample rows scaled by
/// sqrt(alpha_n)). A secondary estimate; the cluster bootstrap is primary.
inline Eigen::MatrixXd asymptotic_covariance(const MbarResult& r) {
  const PooledSamples& p = *r.samples;
  const auto N = static_cast<Eigen::Index>(p.size());
  const auto K = static_cast<Eigen::Index>(r.n_states());
  Eigen::MatrixXd w(N, K);
  for (Eigen::Index n = 0; n < N; ++n) {
    const double sa = std::sqrt(r.masses.alpha[static_cast<std::size_t>(n)]);
    for (Eigen::Index k = 0; k < K; ++k) {
      w(n, k) = sa * std::exp(r.f(k) - p.bias(n, k) - r.log_denominator[static_cast<std::size_t>(n)]);
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(w, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  const Eigen::MatrixXd v = svd.matrixV();
  Eigen::VectorXd m(K);
  for (Eigen::Index k = 0; k < K; ++k) m(k) = r.masses.masses[static_cast<std::size_t>(k)];
  const Eigen::MatrixXd sig = s.asDiagonal();
  const Eigen::MatrixXd inner = Eigen::MatrixXd::Identity(K, K) - sig * v.transpose() * m.asDiagonal() * v * sig;
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(inner.rows(), inner.cols());
  cod.setThreshold(1e-10);
  cod.compute(inner);
  const Eigen::MatrixXd pinv = cod.pseudoInverse();
  return v * sig * pinv * sig * v.transpose();
}

/// Standard errors of f_k - f_0 from a covariance matrix.
inline std::vector<double> free_energy_errors(const Eigen::MatrixXd& theta) {
  std::vector<double> se(static_cast<std::size_t>(theta.rows()));
  for (Eigen::Index k = 0; k < theta.rows(); ++k) {
    se[static_cast<std::size_t>(k)] = std::sqrt(std::max(0.0, theta(k, k) + theta(0, 0) - 2.0 * theta(0, k)));
  }
  return se;
}

/// Cluster ids over the pooled samples: one cluster per (window, trajectory).
inline std::vector<std::size_t> cluster_index(const PooledSamples& p) {
  std::vector<std::size_t> order(p.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(p.window[a], p.trajectory[a]) < std::tie(p.window[b], p.trajectory[b]);
  });
  std::vector<std::size_t> id(p.size());
  std::size_t c = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i > 0 && std::tie(p.window[order[i]], p.trajectory[order[i]]) !=
                     std::tie(p.window[order[i - 1]], p.trajectory[order[i - 1]])) {
      ++c;
    }
    id[order[i]] = c;
  }
  return id;
}

/// Cluster bootstrap with an MBAR re-solve per replicate. Clusters are drawn
/// with replacement within each window. `stat` maps a replicate result to a
/// vector of statistics; returns one row per replicate.
inline std::vector<std::vector<double>> mbar_bootstrap(
    const MbarResult& r, std::size_t n_boot, std::uint64_t seed,
    const std::function<std::vector<double>(const MbarResult&)>& stat, const MbarOptions& opts = {}) {
  const PooledSamples& p = *r.samples;
  const auto cid = cluster_index(p);
  const std::size_t n_clusters = cid.empty() ? 0 : *std::max_element(cid.begin(), cid.end()) + 1;
  std::vector<std::vector<std::size_t>> by_window(p.n_states);
  std::vector<int> cluster_window(n_clusters, -1);
  for (std::size_t n = 0; n < p.size(); ++n) {
    if (cluster_window[cid[n]] < 0) {
      cluster_window[cid[n]] = p.window[n];
      by_window[p.window[n]].push_back(cid[n]);
    }
  }
  MbarOptions o = opts;
  std::vector<std::vector<double>> out;
  out.reserve(n_boot);
  std::vector<double> counts(n_clusters);
  std::vector<double> mult(p.size());
  for (std::size_t b = 0; b < n_boot; ++b) {
    std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * (b + 1));
    std::fill(counts.begin(), counts.end(), 0.0);
    for (const auto& cl : by_window) {
      std::uniform_int_distribution<std::size_t> pick(0, cl.size() - 1);
      for (std::size_t j = 0; j < cl.size(); ++j) counts[cl[pick(rng)]] += 1.0;
    }
    for (std::size_t n = 0; n < p.size(); ++n) mult[n] = counts[cid[n]];
    const MbarResult rep = mbar_solve(r.samples, o, mult, r.f);
    out.push_back(stat(rep));
  }
  return out;
}

}  // namespace eds
