#pragma once

#include "eds/noise_schedule.hpp"
#include "eds/rng.hpp"
#include "eds/types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace eds {

struct MixtureComponent {
  double weight = 1.0;
  Vec mean;
  Mat covariance;
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace detail

/// Gaussian mixture with every component's precision and normaliser cached.
/// Used both for the data distribution and for its diffused marginals p_t.
class DiffusedMixture {
 public:
  struct Term {
    double log_norm;  // log weight - 1/2 log det(2 pi C)
    Vec mean;
    Mat precision;
  };

  DiffusedMixture() = default;
  explicit DiffusedMixture(std::vector<Term> terms) : terms_(std::move(terms)) {}

  int dimension() const { return static_cast<int>(terms_.front().mean.size()); }
  std::span<const Term> terms() const { return terms_; }

  double log_density(const Vec& x) const {
    double buf[16];
    const std::size_t n = terms_.size();
    std::vector<double> heap;
    double* lp = buf;
    if (n > 16) {
      heap.resize(n);
      lp = heap.data();
    }
    for (std::size_t k = 0; k < n; ++k) {
      const Vec d = x - terms_[k].mean;
      lp[k] = terms_[k].log_norm - 0.5 * d.dot(terms_[k].precision * d);
    }
    return detail::log_sum_exp({lp, n});
  }

  /// Gradient of log p via responsibility-weighted component scores.
  Vec score(const Vec& x) const {
    Vec out;
    log_density_and_score(x, out);
    return out;
  }

  double log_density_and_score(const Vec& x, Vec& score_out) const {
    const std::size_t n = terms_.size();
    double lp_buf[16];
    Vec g_buf[16];
    std::vector<double> lp_heap;
    std::vector<Vec> g_heap;
    double* lp = lp_buf;
    Vec* g = g_buf;
    if (n > 16) {
      lp_heap.resize(n);
      g_heap.resize(n);
      lp = lp_heap.data();
      g = g_heap.data();
    }
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < n; ++k) {
      const Vec d = x - terms_[k].mean;
      g[k] = -(terms_[k].precision * d);
      lp[k] = terms_[k].log_norm + 0.5 * d.dot(g[k]);
      m = std::max(m, lp[k]);
    }
    score_out = Vec::Zero(x.size());
    double z = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double r = std::exp(lp[k] - m);
      z += r;
      score_out += r * g[k];
    }
    score_out /= z;
    return m + std::log(z);
  }

 private:
  std::vector<Term> terms_;
};

/// Equilibrium target p(x) = exp(-u(x)) as a finite Gaussian mixture.
class GaussianMixture {
 public:
  GaussianMixture() = default;

  explicit GaussianMixture(std::vector<MixtureComponent> components)
      : components_(std::move(components)) {
    if (components_.empty()) throw std::invalid_argument("GaussianMixture: no components");
    const auto d = components_.front().mean.size();
    if (d < 1 || d > kMaxDim) throw std::invalid_argument("GaussianMixture: dimension must be 1..3");
    double total = 0.0;
    for (const auto& c : components_) {
      if (!(c.weight > 0.0) || !std::isfinite(c.weight)) {
        throw std::invalid_argument("GaussianMixture: weights must be strictly positive");
      }
      if (c.mean.size() != d || c.covariance.rows() != d || c.covariance.cols() != d) {
        throw std::invalid_argument("GaussianMixture: inconsistent component dimensions");
      }
      if (!c.mean.allFinite() || !c.covariance.allFinite()) {
        throw std::invalid_argument("GaussianMixture: non-finite parameters");
      }
      const double scale = std::max(1.0, c.covariance.cwiseAbs().maxCoeff());
      if ((c.covariance - c.covariance.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw std::invalid_argument("GaussianMixture: covariance is not symmetric");
      }
      Eigen::SelfAdjointEigenSolver<Mat> eig(c.covariance, Eigen::EigenvaluesOnly);
      if (!(eig.eigenvalues().minCoeff() > 0.0)) {
        throw std::invalid_argument("GaussianMixture: covariance is not positive definite");
      }
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12) {
      throw std::invalid_argument("GaussianMixture: weights must sum to 1 (got " +
                                  std::to_string(total) + ")");
    }
    data_ = build(1.0, 0.0);
  }

  int dimension() const { return static_cast<int>(components_.front().mean.size()); }
  std::span<const MixtureComponent> components() const { return components_; }

  /// Mixture of x_t = alpha x_0 + s eps: component means alpha*mu, covariances
  /// alpha^2 Sigma + s^2 I.
  DiffusedMixture diffused(const NoiseSchedule& schedule, double t) const {
    if (!(t >= 0.0) || t > schedule.t_end() + 1e-12) {
      throw std::invalid_argument("diffused marginal requested outside [0, 1 - epsilon]");
    }
    return build(schedule.alpha(t), schedule.noise_variance(t));
  }

  /// Data-time marginal (alpha = 1, s = 0).
  const DiffusedMixture& data() const { return data_; }

  double log_density(const Vec& x) const { return data_.log_density(x); }
  Vec score(const Vec& x) const { return data_.score(x); }

  /// u(x) = -log p(x)
  double energy(const Vec& x) const { return -data_.log_density(x); }
  Vec energy_gradient(const Vec& x) const { return -data_.score(x); }

  template <class Rng>
  Vec sample(Rng& rng) const {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t k = 0;
    for (; k + 1 < components_.size(); ++k) {
      acc += components_[k].weight;
      if (u < acc) break;
    }
    const auto& c = components_[k];
    Eigen::LLT<Mat> llt(c.covariance);
    Vec z(c.mean.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
    return c.mean + llt.matrixL() * z;
  }

  /// Exact marginal along one coordinate.
  GaussianMixture marginal(int axis) const {
    if (axis < 0 || axis >= dimension()) throw std::invalid_argument("marginal: bad axis");
    std::vector<MixtureComponent> out;
    for (const auto& c : components_) {
      Mat cov(1, 1);
      cov(0, 0) = c.covariance(axis, axis);
      out.push_back({c.weight, scalar_vec(c.mean(axis)), cov});
    }
    return GaussianMixture(std::move(out));
  }

 private:
  DiffusedMixture build(double alpha, double noise_var) const {
    std::vector<DiffusedMixture::Term> terms;
    terms.reserve(components_.size());
    const auto d = components_.front().mean.size();
    for (const auto& c : components_) {
      Mat cov = alpha * alpha * c.covariance;
      cov.diagonal().array() += noise_var;
      Eigen::LLT<Mat> llt(cov);
      const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      DiffusedMixture::Term term;
      term.mean = alpha * c.mean;
      term.precision = llt.solve(Mat::Identity(d, d));
      term.log_norm = std::log(c.weight) -
                      0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det);
      terms.push_back(std::move(term));
    }
    return DiffusedMixture(std::move(terms));
  }

  std::vector<MixtureComponent> components_;
  DiffusedMixture data_;
};

/// Exact score of the diffused marginal, grad log p_t(x).
inline Vec score_at_time(const GaussianMixture& model, const NoiseSchedule& schedule, double t,
                         const Vec& x) {
  return model.diffused(schedule, t).score(x);
}

}  // namespace eds
