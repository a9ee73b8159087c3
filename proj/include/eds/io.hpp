#pragma once

#include "eds/bias.hpp"
#include "eds/collective_variable.hpp"
#include "eds/dgdiff.hpp"
#include "eds/ensemble.hpp"
#include "eds/gaussian_mixture.hpp"
#include "eds/langevin.hpp"
#include "eds/mbar.hpp"
#include "eds/metadiff.hpp"
#include "eds/noise_schedule.hpp"
#include "eds/pmf.hpp"
#include "eds/study.hpp"
#include "eds/umbrella.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace eds {

using json = nlohmann::json;

// ---------------------------------------------------------------- JSON

inline json to_json(const CollectiveVariable& cv) {
  if (cv.is_projection()) return {{"kind", "projection"}, {"axis", cv.axis()}};
  const auto& s = std::get<SigmoidProgress>(cv.kind());
  return {{"kind", "sigmoid"}, {"axis", s.axis}, {"center", s.center}, {"length_scale", s.length_scale}};
}

inline CollectiveVariable cv_from_json(const json& j) {
  const std::string kind = j.value("kind", "projection");
  const int axis = j.value("axis", 0);
  if (axis < 0) throw ConfigError("cv: axis must be >= 0");
  if (kind == "projection") return CollectiveVariable::projection(axis);
  if (kind == "sigmoid") {
    const double ell = j.at("length_scale").get<double>();
    if (!(ell > 0.0)) throw ConfigError("cv: length_scale must be > 0");
    return CollectiveVariable::sigmoid(axis, j.at("center").get<double>(), ell);
  }
  throw ConfigError("cv: unknown kind '" + kind + "'");
}

inline json to_json(const BiasPotential& b) {
  return std::visit(
      [](const auto& k) -> json {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, ZeroBias>) {
          return {{"kind", "zero"}};
        } else if constexpr (std::is_same_v<T, LinearTilt>) {
          return {{"kind", "linear-tilt"}, {"slope", k.slope}, {"centered", k.centered}, {"cv", to_json(k.cv)}};
        } else if constexpr (std::is_same_v<T, ClampedLinear>) {
          return {{"kind", "clamped-linear"}, {"slope", k.slope}, {"c_min", k.c_min}, {"c_max", k.c_max},
                  {"cv", to_json(k.cv)}};
        } else if constexpr (std::is_same_v<T, Harmonic>) {
          return {{"kind", "harmonic"}, {"center", k.center}, {"stiffness", k.stiffness}, {"cv", to_json(k.cv)}};
        } else if constexpr (std::is_same_v<T, HillSum>) {
          json hills = json::array();
          for (const auto& h : k.hills()) hills.push_back({{"center", h.center}, {"amplitude", h.amplitude}});
          return {{"kind", "hill-sum"}, {"width", k.width()}, {"cv", to_json(k.cv())}, {"hills", hills}};
        } else {
          json terms = json::array();
          for (const auto& t : k.terms) terms.push_back(to_json(t));
          return {{"kind", "sum"}, {"terms", terms}};
        }
      },
      b.kind());
}

inline BiasPotential bias_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  const CollectiveVariable cv = j.contains("cv") ? cv_from_json(j.at("cv")) : CollectiveVariable{};
  try {
    if (kind == "zero") return BiasPotential::zero();
    if (kind == "linear-tilt") {
      return BiasPotential::linear_tilt(j.at("slope").get<double>(), cv, j.value("centered", false));
    }
    if (kind == "clamped-linear") {
      return BiasPotential::clamped_linear(j.at("slope").get<double>(), j.at("c_min").get<double>(),
                                           j.at("c_max").get<double>(), cv);
    }
    if (kind == "harmonic") return BiasPotential::harmonic(j.at("center").get<double>(), j.at("stiffness").get<double>(), cv);
    if (kind == "hill-sum") {
      const double width = j.at("width").get<double>();
      if (!(width > 0.0)) throw ConfigError("bias: hill width must be > 0");
      HillSum h(width, cv);
      for (const auto& e : j.value("hills", json::array())) h.deposit(e.at("center").get<double>(), e.at("amplitude").get<double>());
      return h;
    }
    if (kind == "sum") {
      SumOfBiases s;
      for (const auto& t : j.at("terms")) s.terms.push_back(bias_from_json(t));
      return s;
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bias: ") + e.what());
  }
  throw ConfigError("bias: unknown kind '" + kind + "'");
}

inline json to_json(const NoiseSchedule& s) {
  return {{"beta_min", s.beta_min()}, {"beta_max", s.beta_max()}, {"epsilon", s.epsilon()}};
}

inline NoiseSchedule schedule_from_json(const json& j) {
  const NoiseSchedule d;
  try {
    return NoiseSchedule(j.value("beta_min", d.beta_min()), j.value("beta_max", d.beta_max()),
                         j.value("epsilon", d.epsilon()));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

/// {dimension, components: [{weight, mean, covariance (row-major)}], schedule}
inline json to_json(const GaussianMixture& m, const NoiseSchedule& s) {
  json comps = json::array();
  for (const auto& c : m.components()) {
    std::vector<double> mean(c.mean.data(), c.mean.data() + c.mean.size());
    std::vector<double> cov;
    for (Eigen::Index r = 0; r < c.covariance.rows(); ++r) {
      for (Eigen::Index k = 0; k < c.covariance.cols(); ++k) cov.push_back(c.covariance(r, k));
    }
    comps.push_back({{"weight", c.weight}, {"mean", mean}, {"covariance", cov}});
  }
  return {{"dimension", m.dimension()}, {"components", comps}, {"schedule", to_json(s)}};
}

inline GaussianMixture model_from_json(const json& j) {
  const int d = j.at("dimension").get<int>();
  if (d < 1 || d > kMaxDim) throw ConfigError("model: dimension must lie in [1, " + std::to_string(kMaxDim) + "]");
  std::vector<MixtureComponent> comps;
  for (const auto& c : j.at("components")) {
    const auto mean = c.at("mean").get<std::vector<double>>();
    const auto cov = c.at("covariance").get<std::vector<double>>();
    if (static_cast<int>(mean.size()) != d) throw ConfigError("model: mean has the wrong length");
    if (static_cast<int>(cov.size()) != d * d) throw ConfigError("model: covariance must have dimension^2 entries");
    MixtureComponent mc;
    mc.weight = c.at("weight").get<double>();
    mc.mean = Vec(d);
    mc.covariance = Mat(d, d);
    for (int i = 0; i < d; ++i) {
      mc.mean(i) = mean[static_cast<std::size_t>(i)];
      for (int k = 0; k < d; ++k) mc.covariance(i, k) = cov[static_cast<std::size_t>(i * d + k)];
    }
    comps.push_back(mc);
  }
  try {
    return GaussianMixture(std::move(comps));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

inline Interpolation parse_interpolation(std::string_view s) {
  if (s == "linear") return Interpolation::kLinear;
  if (s == "smoothstep") return Interpolation::kSmoothstep;
  throw ConfigError("unknown interpolation '" + std::string(s) + "'");
}

inline std::string_view to_string(Interpolation i) { return i == Interpolation::kLinear ? "linear" : "smoothstep"; }

inline SteeringConfig steering_from_json(const json& j, SteeringConfig c = {}) {
  static const std::vector<std::string> keys = {"n_particles", "n_steps", "noise_scale", "resample_period",
                                                "ess_threshold", "terminal_resample", "branch"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) {
      throw ConfigError("steering: unknown key '" + it.key() + "'");
    }
  }
  c.n_particles = j.value("n_particles", c.n_particles);
  c.n_steps = j.value("n_steps", c.n_steps);
  c.noise_scale = j.value("noise_scale", c.noise_scale);
  if (j.contains("resample_period")) {
    if (j["resample_period"].is_null()) c.resample_period.reset();
    else c.resample_period = j["resample_period"].get<std::size_t>();
  }
  if (j.contains("ess_threshold")) {
    if (j["ess_threshold"].is_null()) c.ess_threshold.reset();
    else c.ess_threshold = j["ess_threshold"].get<double>();
  }
  c.terminal_resample = j.value("terminal_resample", c.terminal_resample);
  if (j.contains("branch") && !j["branch"].is_null()) {
    BranchConfig b;
    b.t_branch = j["branch"].value("t_branch", b.t_branch);
    b.factor = j["branch"].value("factor", b.factor);
    c.branch = b;
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------- CSV

/// Column headers of every CSV the CLI writes.
inline const std::map<std::string, std::vector<std::string>>& csv_schemas() {
  static const std::map<std::string, std::vector<std::string>> s = {
      {"ensemble", {"window_index", "trajectory_id", "ancestor_id", "x0", "x1", "x2", "xi", "log_weight"}},
      {"steps", {"window_index", "step", "t", "ess", "resampled"}},
      {"mbar", {"state", "f", "se"}},
      {"weights", {"sample", "w0"}},
      {"overlap", {"state", "o"}},  // o0..o{K-1} follow
      {"pmf", {"center", "value", "se", "exact", "mass"}},
      {"windows", {"k", "center", "kappa", "n", "ess"}},
      {"hills", {"iteration", "center", "amplitude", "mass"}},
      {"checkpoints", {"iteration", "bias_change", "pmf_change", "fraction_b", "batch_ess", "dg_kbt", "dg_se", "dg_kcal"}},
      {"ladder", {"a", "n", "ess", "pi_a", "pi_b", "overlap_left", "overlap_right", "overlap_left_raw",
                  "overlap_right_raw", "depth", "flagged"}},
      {"autocorr", {"window", "g"}},
      {"study", {"method", "delta_g", "n", "repeats", "failed", "mean", "sd", "abs_mean_error_kcal", "sd_kcal",
                 "ci_low", "ci_high", "mean_total_samples", "converged"}},
      {"study_repeats", {"method", "delta_g", "n", "repeat", "estimate", "total_samples"}},
      {"failure_rate", {"n", "repeats", "failures", "rate", "se", "closed_form"}},
  };
  return s;
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(std::ostream& os, const std::vector<std::string>& header) : os_(os) { row_strings(header); }

  template <class... T>
  void row(const T&... v) {
    std::vector<std::string> cells{cell(v)...};
    row_strings(cells);
  }

  void row_strings(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os_ << (i ? "," : "") << cells[i];
    os_ << '\n';
  }

  static std::string cell(double v) { return format_number(v); }
  static std::string cell(bool v) { return v ? "1" : "0"; }
  static std::string cell(const std::string& v) { return v; }
  static std::string cell(std::string_view v) { return std::string(v); }
  static std::string cell(const char* v) { return v; }
  template <class I>
    requires std::is_integral_v<I>
  static std::string cell(I v) {
    return std::to_string(v);
  }

 private:
  std::ostream& os_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

inline CsvTable read_csv(std::istream& is) {
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      t.rows.push_back(std::move(cells));
    }
  }
  return t;
}

/// Ensemble rows carry x0..x2; unused coordinates are left empty.
inline void write_ensembles_csv(std::ostream& os, std::span<const WeightedEnsemble> ens, const CollectiveVariable& cv) {
  CsvWriter w(os, csv_schemas().at("ensemble"));
  for (const auto& e : ens) {
    for (const auto& p : e.particles) {
      std::vector<std::string> cells{std::to_string(e.window_index), std::to_string(p.trajectory_id),
                                     std::to_string(p.ancestor_id)};
      for (Eigen::Index d = 0; d < kMaxDim; ++d) cells.push_back(d < p.x.size() ? format_number(p.x(d)) : "");
      cells.push_back(format_number(cv.value(p.x)));
      cells.push_back(format_number(p.log_weight));
      w.row_strings(cells);
    }
  }
}

inline void write_steps_csv(std::ostream& os, std::span<const WeightedEnsemble> ens) {
  CsvWriter w(os, csv_schemas().at("steps"));
  for (const auto& e : ens) {
    for (const auto& s : e.step_log) w.row(e.window_index, s.step, s.t, s.ess, s.resampled);
  }
}

inline void write_mbar_csv(std::ostream& os, const MbarResult& r, const std::vector<double>& se = {}) {
  CsvWriter w(os, csv_schemas().at("mbar"));
  for (Eigen::Index k = 0; k < r.f.size(); ++k) {
    const auto i = static_cast<std::size_t>(k);
    w.row(k, r.f(k), i < se.size() ? se[i] : std::numeric_limits<double>::quiet_NaN());
  }
}

inline void write_weights_csv(std::ostream& os, const MbarResult& r) {
  CsvWriter w(os, csv_schemas().at("weights"));
  const auto wt = target_weights(r, 0);
  for (std::size_t i = 0; i < wt.size(); ++i) w.row(i, wt[i]);
}

inline void write_overlap_csv(std::ostream& os, const Eigen::MatrixXd& o) {
  std::vector<std::string> header{"state"};
  for (Eigen::Index k = 0; k < o.cols(); ++k) header.push_back("o" + std::to_string(k));
  CsvWriter w(os, header);
  for (Eigen::Index i = 0; i < o.rows(); ++i) {
    std::vector<std::string> cells{std::to_string(i)};
    for (Eigen::Index k = 0; k < o.cols(); ++k) cells.push_back(format_number(o(i, k)));
    w.row_strings(cells);
  }
}

inline void write_pmf_csv(std::ostream& os, const PmfEstimate& p, const PmfEstimate* exact = nullptr) {
  CsvWriter w(os, csv_schemas().at("pmf"));
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t j = 0; j < p.size(); ++j) {
    w.row(p.centers[j], p.values[j], j < p.standard_errors.size() ? p.standard_errors[j] : nan,
          exact ? exact->values[j] : nan, j < p.mass.size() ? p.mass[j] : nan);
  }
}

inline void write_windows_csv(std::ostream& os, const std::vector<UmbrellaWindow>& win, std::span<const double> ess) {
  CsvWriter w(os, csv_schemas().at("windows"));
  for (std::size_t k = 0; k < win.size(); ++k) {
    w.row(k, win[k].center, win[k].stiffness, win[k].n_samples,
          k < ess.size() ? ess[k] : std::numeric_limits<double>::quiet_NaN());
  }
}

inline void write_hills_csv(std::ostream& os, const std::vector<DepositRecord>& deposits) {
  CsvWriter w(os, csv_schemas().at("hills"));
  for (const auto& d : deposits) w.row(d.iteration, d.center, d.amplitude, d.mass);
}

inline void write_checkpoints_csv(std::ostream& os, const std::vector<MetaCheckpoint>& cps) {
  CsvWriter w(os, csv_schemas().at("checkpoints"));
  for (const auto& c : cps) {
    w.row(c.iteration, c.bias_change, c.pmf_change, c.fraction_b, c.batch_ess, c.dg.dg_kbt, c.dg.standard_error,
          c.dg.dg_kcal);
  }
}

inline void write_ladder_csv(std::ostream& os, const std::vector<TiltEntry>& ladder) {
  CsvWriter w(os, csv_schemas().at("ladder"));
  for (const auto& t : ladder) {
    w.row(t.a, t.ensemble.size(), t.ess, t.core.a, t.core.b, t.overlap_left, t.overlap_right, t.overlap_left_raw,
          t.overlap_right_raw, t.depth, t.flagged);
  }
}

inline void write_autocorr_csv(std::ostream& os, const std::vector<double>& g) {
  CsvWriter w(os, csv_schemas().at("autocorr"));
  for (std::size_t k = 0; k < g.size(); ++k) w.row(k, g[k]);
}

inline void write_study_csv(std::ostream& os, const std::vector<StudyResult>& results) {
  CsvWriter w(os, csv_schemas().at("study"));
  for (const auto& r : results) {
    for (const auto& x : r.rows) {
      w.row(to_string(x.method), x.delta_g, x.n, x.repeats, x.failed, x.mean, x.sd, x.abs_mean_error_kcal, x.sd_kcal,
            x.ci_low, x.ci_high, x.mean_total_samples, x.converged);
    }
  }
}

inline void write_study_repeats_csv(std::ostream& os, const std::vector<StudyResult>& results) {
  CsvWriter w(os, csv_schemas().at("study_repeats"));
  for (const auto& r : results) {
    for (const auto& x : r.repeats) w.row(to_string(x.method), x.delta_g, x.n, x.repeat, x.estimate, x.total_samples);
  }
}

inline void write_failure_rate_csv(std::ostream& os, const std::vector<FailureRow>& rows,
                                   const std::vector<double>& closed_form = {}) {
  CsvWriter w(os, csv_schemas().at("failure_rate"));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    w.row(r.n, r.repeats, r.failures, r.rate, r.standard_error,
          i < closed_form.size() ? closed_form[i] : std::numeric_limits<double>::quiet_NaN());
  }
}

/// JSON numbers cannot be NaN or inf; those become null.
inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const DgEstimate& d) {
  return {{"failure", d.failure},
          {"mass", number_or_null(d.mass)},
          {"dg_kbt", number_or_null(d.dg_kbt)},
          {"dg_kcal", number_or_null(d.dg_kcal)},
          {"standard_error", number_or_null(d.standard_error)},
          {"ci_low", number_or_null(d.ci_low)},
          {"ci_high", number_or_null(d.ci_high)},
          {"n_boot", d.n_boot},
          {"n_boot_failed", d.n_boot_failed}};
}

inline json to_json(const DgDiffResult& r, double kcal_per_kbt = kKcalPerKbt300) {
  json gaps = json::array();
  for (const auto& [a, b] : r.gaps) gaps.push_back({a, b});
  return {{"dg_ab_kbt", number_or_null(r.dg_ab)},
          {"dg_ab_kcal", number_or_null(r.dg_ab * kcal_per_kbt)},
          {"ci_low_kbt", number_or_null(-r.estimate.ci_high)},
          {"ci_high_kbt", number_or_null(-r.estimate.ci_low)},
          {"standard_error_kbt", number_or_null(r.estimate.standard_error)},
          {"n_boot", r.estimate.n_boot},
          {"n_boot_failed", r.estimate.n_boot_failed},
          {"delta_g", to_json(r.estimate)},
          {"ladder_size", r.ladder.size()},
          {"total_samples", r.total_samples},
          {"gaps", gaps},
          {"warnings", r.warnings}};
}

inline json to_json(const UmbrellaDiagnostics& d) {
  json pairs = json::array();
  for (const auto& n : d.neighbours) {
    pairs.push_back({{"k", n.k},
                     {"kde", number_or_null(n.kde)},
                     {"nominal_bhattacharyya", number_or_null(n.nominal_bhattacharyya)},
                     {"nominal_area", number_or_null(n.nominal_area)},
                     {"mbar", number_or_null(n.mbar)},
                     {"in_band", n.in_band}});
  }
  json ess = json::array();
  for (double e : d.ess) ess.push_back(number_or_null(e));
  return {{"ess", ess},
          {"low_ess", d.low_ess},
          {"overlap_pairs", pairs},
          {"connected", d.overlap.connected},
          {"bridge_centers", d.bridge_centers},
          {"bridge_rounds", d.bridge_rounds},
          {"warnings", d.warnings}};
}

}  // namespace eds
