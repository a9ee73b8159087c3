#include "eds/eds.hpp"

#include <CLI11.hpp>
#include <boost/version.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using eds::ConfigError;
using eds::json;
using eds::NumericalError;

namespace {

constexpr const char* kVersion = "0.1.0";

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    json j = json::parse(in, nullptr, true, true);
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
}

void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end()) {
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
  }
}

std::vector<std::string> with_common(std::vector<std::string> keys) {
  for (const char* k : {"seed", "name"}) keys.emplace_back(k);
  return keys;
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

/// runs/<name>/<timestamp>/{config.snapshot, manifest.json, outputs/}
class RunDir {
 public:
  RunDir(const fs::path& root, const std::string& name, const std::string& subcommand, const json& cfg)
      : subcommand_(subcommand), cfg_(cfg), timestamp_(utc_timestamp()) {
    fs::path base = root / name / timestamp_;
    dir_ = base;
    for (int i = 1; fs::exists(dir_); ++i) dir_ = base.string() + "-" + std::to_string(i);
    fs::create_directories(dir_ / "outputs");
    std::ofstream(dir_ / "config.snapshot") << cfg.dump(2) << '\n';
  }

  std::ofstream open(const std::string& file) {
    files_.push_back(file);
    std::ofstream os(dir_ / "outputs" / file);
    if (!os) throw std::runtime_error("cannot write " + file);
    return os;
  }

  void write_json(const std::string& file, const json& j) { open(file) << j.dump(2) << '\n'; }

  void finish(int status) const {
    json m = {{"subcommand", subcommand_},
              {"seed", cfg_.value("seed", std::uint64_t{0})},
              {"timestamp", timestamp_},
              {"status", status},
              {"outputs", files_},
              {"versions",
               {{"eds", kVersion},
                {"compiler", __VERSION__},
                {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                              std::to_string(EIGEN_MINOR_VERSION)},
                {"boost", BOOST_LIB_VERSION},
                {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                      std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}}};
    std::ofstream(dir_ / "manifest.json") << m.dump(2) << '\n';
  }

  const fs::path& path() const { return dir_; }

 private:
  std::string subcommand_;
  json cfg_;
  std::string timestamp_;
  fs::path dir_;
  std::vector<std::string> files_;
};

std::uint64_t seed_of(const json& c) { return c.value("seed", std::uint64_t{0}); }

eds::NoiseSchedule schedule_of(const json& c) {
  if (c.contains("model") && c["model"].contains("schedule")) return eds::schedule_from_json(c["model"]["schedule"]);
  return {};
}

eds::Interpolation interpolation_of(const json& c) {
  return eds::parse_interpolation(c.value("interpolation", std::string("linear")));
}

eds::SteeringConfig steering_of(const json& c, eds::SteeringConfig d = {}) {
  d = c.contains("steering") ? eds::steering_from_json(c["steering"], d) : d;
  d.seed = seed_of(c);
  return d;
}

/// Explicit model, else a double well built from delta_g.
eds::GaussianMixture well_of(const json& c, double default_dg) {
  if (c.contains("model")) return eds::model_from_json(c["model"]);
  const double dg = c.value("delta_g", default_dg);
  try {
    return eds::make_double_well(dg, c.value("separation", eds::kDefaultWellSeparation),
                                 c.value("width", eds::kDefaultWellWidth));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

eds::PotentialSurface surface_of(const json& c, const std::string& fallback) {
  const auto kind = eds::parse_surface_kind(c.value("surface", fallback));
  if (kind == eds::SurfaceKind::kMixture) {
    if (!c.contains("model")) throw ConfigError("surface 'mixture' needs a model");
    return eds::make_surface(kind, eds::model_from_json(c["model"]));
  }
  return eds::make_surface(kind);
}

std::vector<eds::UmbrellaWindow> windows_of(const json& c) {
  const json w = c.value("windows", json{{"lo", -3.0}, {"hi", 3.0}, {"k", 8}});
  if (w.contains("centers")) {
    std::vector<eds::UmbrellaWindow> out;
    const auto centers = w["centers"].get<std::vector<double>>();
    const auto kappa = w.at("stiffness").get<std::vector<double>>();
    if (centers.size() != kappa.size() || centers.size() < 2) {
      throw ConfigError("windows: centers and stiffness must have equal length >= 2");
    }
    for (std::size_t k = 0; k < centers.size(); ++k) out.push_back({centers[k], kappa[k], 0});
    return out;
  }
  check_keys(w, {"lo", "hi", "k"}, "windows");
  return eds::design_windows(w.value("lo", -3.0), w.value("hi", 3.0), w.value("k", std::size_t{8}));
}

std::optional<std::vector<double>> pmf_edges_of(const json& c) {
  if (!c.contains("pmf_range")) return std::nullopt;
  const auto r = c["pmf_range"].get<std::vector<double>>();
  if (r.size() != 2) throw ConfigError("pmf_range must be [lo, hi]");
  return eds::uniform_edges(r[0], r[1], c.value("pmf_bins", eds::kDefaultHistogramBins));
}

double gamma_of(const json& c, double fallback) {
  if (!c.contains("gamma")) return fallback;
  const auto& g = c["gamma"];
  if (g.is_null() || (g.is_string() && g.get<std::string>() == "inf")) return std::numeric_limits<double>::infinity();
  return g.get<double>();
}

eds::PmfComparison compare_to_oracle(const eds::PmfEstimate& est, const eds::PmfEstimate& exact, double threshold) {
  std::vector<bool> mask;
  for (double m : exact.mass) mask.push_back(m > threshold);
  return eds::compare_pmf(est.values, exact.values, mask);
}

// ---------------------------------------------------------------- subcommands

int run_tilt1d(const json& c, RunDir& run) {
  check_keys(c, with_common({"delta_g", "separation", "width", "model", "n", "slope", "steering", "interpolation",
                             "n_boot"}),
             "tilt1d");
  const auto model = well_of(c, -7.0);
  const auto schedule = schedule_of(c);
  auto sc = steering_of(c);
  sc.n_particles = c.value("n", sc.n_particles);
  const double slope = c.contains("slope") ? c["slope"].get<double>() : eds::equalizing_slope(model);
  const auto bias = eds::BiasPotential::linear_tilt(slope);
  const auto e = eds::steer(model, schedule, eds::BiasSchedule(bias, interpolation_of(c)), sc);
  const double x0 = eds::barrier_location(model);
  const auto est = eds::dg_from_membership(eds::direct_reweight_samples(e, bias), eds::below(x0),
                                           c.value("n_boot", eds::kDefaultBootstrap), sc.seed);
  const double oracle = eds::exact_free_energy_difference(model, eds::below(x0));
  const std::vector<eds::WeightedEnsemble> ens{e};
  auto os = run.open("ensemble.csv");
  eds::write_ensembles_csv(os, ens, eds::CollectiveVariable::projection(0));
  auto st = run.open("steps.csv");
  eds::write_steps_csv(st, ens);
  run.write_json("estimate.json", {{"oracle_kbt", oracle},
                                   {"slope", slope},
                                   {"barrier", x0},
                                   {"terminal_ess", e.terminal_ess},
                                   {"estimate", eds::to_json(est)},
                                   {"warnings", e.warnings}});
  std::printf("delta_g = %.4f k_BT (se %.4f), oracle %.4f\n", est.dg_kbt, est.standard_error, oracle);
  return 0;
}

int run_umbrella(const json& c, RunDir& run) {
  check_keys(c, with_common({"surface", "model", "cv", "windows", "steering", "interpolation", "pilot_particles",
                             "kappa_max", "ess_floor", "band", "pmf_bins", "pmf_range", "n_boot", "auto_bridge",
                             "mass_threshold"}),
             "umbrella");
  const auto surface = surface_of(c, "three-state");
  eds::UmbrellaConfig u;
  u.cv = c.contains("cv") ? eds::cv_from_json(c["cv"]) : eds::CollectiveVariable::projection(0);
  u.windows = windows_of(c);
  eds::SteeringConfig sd;
  sd.n_particles = 4000;
  sd.n_steps = 500;
  u.steering = steering_of(c, sd);
  u.interpolation = interpolation_of(c);
  u.pilot_particles = c.value("pilot_particles", u.pilot_particles);
  u.kappa_max = c.value("kappa_max", u.kappa_max);
  u.ess_floor = c.value("ess_floor", u.ess_floor);
  if (c.contains("band")) {
    const auto b = c["band"].get<std::vector<double>>();
    if (b.size() != 2) throw ConfigError("band must be [lo, hi]");
    u.band_lo = b[0];
    u.band_hi = b[1];
  }
  u.pmf_edges = pmf_edges_of(c);
  u.pmf_bins = c.value("pmf_bins", u.pmf_bins);
  u.n_boot = c.value("n_boot", u.n_boot);
  u.auto_bridge_rounds = c.value("auto_bridge", u.auto_bridge_rounds);
  const auto r = eds::run_umbrelladiff(surface.mixture, schedule_of(c), u);
  const auto exact = eds::exact_pmf(surface.mixture, u.cv, r.pmf.edges);
  const auto cmp = compare_to_oracle(r.pmf, exact, c.value("mass_threshold", 1e-6));

  std::vector<double> ess = r.diagnostics.ess;
  auto w = run.open("windows.csv");
  eds::write_windows_csv(w, r.windows, ess);
  auto e = run.open("ensemble.csv");
  eds::write_ensembles_csv(e, r.ensembles, u.cv);
  auto s = run.open("steps.csv");
  eds::write_steps_csv(s, r.ensembles);
  auto m = run.open("mbar.csv");
  eds::write_mbar_csv(m, r.mbar, r.free_energy_se);
  auto wt = run.open("weights.csv");
  eds::write_weights_csv(wt, r.mbar);
  auto o = run.open("overlap.csv");
  eds::write_overlap_csv(o, r.diagnostics.overlap.matrix);
  auto p = run.open("pmf.csv");
  eds::write_pmf_csv(p, r.pmf, &exact);
  run.write_json("diagnostics.json", eds::to_json(r.diagnostics));
  run.write_json("summary.json", {{"surface", eds::to_string(surface.kind)},
                                  {"max_error_kbt", cmp.max_error},
                                  {"compared_bins", cmp.n_bins},
                                  {"worst_center", r.pmf.centers[cmp.worst_bin]},
                                  {"mbar_iterations", r.mbar.iterations},
                                  {"mbar_converged", r.mbar.converged}});
  std::printf("umbrella: %zu windows, PMF max error %.3f k_BT over %zu bins\n", r.windows.size(), cmp.max_error,
              cmp.n_bins);
  return 0;
}

int run_meta(const json& c, RunDir& run) {
  check_keys(c, with_common({"delta_g", "separation", "width", "model", "cv", "sigma", "gamma", "h0", "rho",
                             "eps_bias", "eps_pmf", "max_iter", "grid_points", "table_range", "steering",
                             "interpolation", "split", "pmf_bins", "pmf_range", "n_boot", "populated_fraction"}),
             "meta");
  const auto model = well_of(c, -13.8);
  eds::MetaDiffConfig m;
  m.cv = c.contains("cv") ? eds::cv_from_json(c["cv"]) : eds::CollectiveVariable::projection(0);
  auto& p = m.params;
  p.sigma = c.value("sigma", 1.0);
  p.gamma = gamma_of(c, std::numeric_limits<double>::infinity());
  p.h0 = c.value("h0", 27.5);
  p.rho = c.value("rho", 0.4);
  p.max_iter = c.value("max_iter", std::size_t{5});
  p.grid_points = c.value("grid_points", p.grid_points);
  if (c.contains("eps_bias")) {
    if (c["eps_bias"].is_null()) p.eps_bias.reset();
    else p.eps_bias = c["eps_bias"].get<double>();
  } else {
    p.eps_bias.reset();
  }
  if (c.contains("eps_pmf") && !c["eps_pmf"].is_null()) p.eps_pmf = c["eps_pmf"].get<double>();
  if (c.contains("table_range")) {
    const auto t = c["table_range"].get<std::vector<double>>();
    if (t.size() != 2) throw ConfigError("table_range must be [lo, hi]");
    p.table_lo = t[0];
    p.table_hi = t[1];
  }
  eds::SteeringConfig sd;
  sd.n_particles = 2000;
  m.steering = steering_of(c, sd);
  m.interpolation = interpolation_of(c);
  const double barrier = eds::barrier_location(model, m.cv.axis());
  m.split = c.value("split", m.cv.is_projection() ? barrier : m.cv.value(eds::scalar_vec(barrier)));
  m.pmf_edges = pmf_edges_of(c);
  m.n_boot = c.value("n_boot", m.n_boot);
  const auto r = eds::run_metadiff(model, schedule_of(c), m);
  const double oracle = eds::exact_free_energy_difference(model, eds::below(barrier, m.cv.axis()));
  const double populated = c.value("populated_fraction", 0.01);

  auto h = run.open("hills.csv");
  eds::write_hills_csv(h, r.state.deposits);
  auto cp = run.open("checkpoints.csv");
  eds::write_checkpoints_csv(cp, r.checkpoints);
  const auto exact = eds::exact_pmf(model, m.cv, r.checkpoints.back().pmf.edges);
  for (const auto& k : r.checkpoints) {
    auto os = run.open("pmf_" + std::to_string(k.iteration) + ".csv");
    eds::write_pmf_csv(os, k.pmf, &exact);
  }
  auto mb = run.open("mbar.csv");
  eds::write_mbar_csv(mb, r.mbar);
  std::optional<std::size_t> first_b;
  json dgs = json::array();
  for (const auto& k : r.checkpoints) {
    if (!first_b && k.fraction_b >= populated) first_b = k.iteration;
    dgs.push_back(eds::to_json(k.dg));
  }
  run.write_json("summary.json", {{"oracle_kbt", oracle},
                                  {"converged", r.converged},
                                  {"stop_reason", r.stop_reason},
                                  {"iterations", r.checkpoints.size()},
                                  {"first_populated_batch", first_b ? json(*first_b) : json(nullptr)},
                                  {"delta_g", dgs},
                                  {"warnings", r.warnings}});
  const auto& last = r.checkpoints.back().dg;
  std::printf("meta: %zu batches, delta_g = %.3f k_BT (oracle %.3f), second basin from batch %s\n",
              r.checkpoints.size(), last.dg_kbt, oracle, first_b ? std::to_string(*first_b).c_str() : "none");
  return 0;
}

int run_dg(const json& c, RunDir& run) {
  check_keys(c, with_common({"delta_g", "separation", "width", "model", "step", "n_initial", "dominance", "overlap",
                             "ess_target", "core", "max_tilt", "max_depth", "n_boot", "steering", "interpolation",
                             "tilt_length_scale", "readout_length_scale"}),
             "dg");
  const auto model = well_of(c, -10.0);
  auto d = eds::default_dgdiff_config(model);
  const double x0 = eds::barrier_location(model);
  if (c.contains("tilt_length_scale")) d.cv = eds::CollectiveVariable::sigmoid(0, x0, c["tilt_length_scale"].get<double>());
  if (c.contains("readout_length_scale")) {
    d.readout = eds::CollectiveVariable::sigmoid(0, x0, c["readout_length_scale"].get<double>());
  }
  auto& p = d.params;
  p.step = c.value("step", p.step);
  p.n_initial = c.value("n_initial", p.n_initial);
  p.dominance = c.value("dominance", p.dominance);
  p.overlap = c.value("overlap", p.overlap);
  p.ess_target = c.value("ess_target", p.ess_target);
  p.core = c.value("core", p.core);
  p.max_tilt = c.value("max_tilt", p.max_tilt);
  p.max_depth = c.value("max_depth", p.max_depth);
  p.n_boot = c.value("n_boot", p.n_boot);
  d.steering = steering_of(c);
  d.interpolation = interpolation_of(c);
  const auto r = eds::run_dgdiff(model, schedule_of(c), d);
  const auto readout = d.readout ? *d.readout : d.cv;
  const double oracle_ab = -eds::exact_free_energy_difference(
      model, [&](const eds::Vec& x) { return 1.0 - readout.value(x); }, std::vector<double>{x0});

  auto l = run.open("ladder.csv");
  eds::write_ladder_csv(l, r.ladder);
  auto m = run.open("mbar.csv");
  eds::write_mbar_csv(m, r.mbar);
  auto o = run.open("overlap.csv");
  eds::write_overlap_csv(o, eds::overlap_matrix(r.mbar).matrix);
  json j = eds::to_json(r);
  j["oracle_dg_ab_kbt"] = oracle_ab;
  run.write_json("dg.json", j);
  std::printf("dg: %zu tilts, dg_AB = %.3f k_BT (oracle %.3f), %zu samples\n", r.ladder.size(), r.dg_ab, oracle_ab,
              r.total_samples);
  return 0;
}

int run_baseline(const json& c, RunDir& run) {
  check_keys(c, with_common({"surface", "model", "cv", "windows", "langevin", "start", "pmf_bins", "pmf_range",
                             "mass_threshold"}),
             "baseline");
  const auto surface = surface_of(c, "three-state");
  eds::BaselineConfig b;
  b.cv = c.contains("cv") ? eds::cv_from_json(c["cv"]) : eds::CollectiveVariable::projection(0);
  b.windows = windows_of(c);
  b.langevin.seed = seed_of(c);
  if (c.contains("langevin")) {
    const auto& l = c["langevin"];
    check_keys(l, {"dt", "n_steps", "equilibration", "stride", "init"}, "langevin");
    b.langevin.dt = l.value("dt", b.langevin.dt);
    b.langevin.n_steps = l.value("n_steps", b.langevin.n_steps);
    b.langevin.equilibration = l.value("equilibration", b.langevin.equilibration);
    b.langevin.stride = l.value("stride", b.langevin.stride);
    const std::string init = l.value("init", std::string("previous"));
    if (init == "previous") b.langevin.init = eds::LangevinInit::kPreviousTerminal;
    else if (init == "center") b.langevin.init = eds::LangevinInit::kWindowCenter;
    else throw ConfigError("langevin: init must be 'previous' or 'center'");
  }
  if (c.contains("start")) {
    const auto s = c["start"].get<std::vector<double>>();
    if (static_cast<int>(s.size()) != surface.mixture.dimension()) throw ConfigError("start has the wrong dimension");
    eds::Vec x(static_cast<Eigen::Index>(s.size()));
    for (std::size_t i = 0; i < s.size(); ++i) x(static_cast<Eigen::Index>(i)) = s[i];
    b.start = x;
  }
  b.pmf_edges = pmf_edges_of(c);
  b.pmf_bins = c.value("pmf_bins", b.pmf_bins);
  const auto r = eds::run_langevin_umbrella(surface, b);
  const auto exact = eds::exact_pmf(surface.mixture, b.cv, r.pmf.edges);
  const auto cmp = compare_to_oracle(r.pmf, exact, c.value("mass_threshold", 1e-6));
  std::vector<double> counts;
  for (std::size_t k = 0; k < r.ensembles.size(); ++k) {
    counts.push_back(static_cast<double>(r.ensembles[k].size()) / r.inefficiency[k]);
  }
  auto w = run.open("windows.csv");
  eds::write_windows_csv(w, r.windows, counts);
  auto a = run.open("autocorr.csv");
  eds::write_autocorr_csv(a, r.inefficiency);
  auto e = run.open("ensemble.csv");
  eds::write_ensembles_csv(e, r.ensembles, b.cv);
  auto m = run.open("mbar.csv");
  eds::write_mbar_csv(m, r.mbar);
  auto o = run.open("overlap.csv");
  eds::write_overlap_csv(o, eds::overlap_matrix(r.mbar).matrix);
  auto p = run.open("pmf.csv");
  eds::write_pmf_csv(p, r.pmf, &exact);
  run.write_json("summary.json", {{"surface", eds::to_string(surface.kind)},
                                  {"max_error_kbt", cmp.max_error},
                                  {"compared_bins", cmp.n_bins},
                                  {"worst_center", r.pmf.centers[cmp.worst_bin]}});
  std::printf("baseline: %zu windows, PMF max error %.3f k_BT over %zu bins\n", r.windows.size(), cmp.max_error,
              cmp.n_bins);
  return 0;
}

int run_study(const json& c, RunDir& run) {
  check_keys(c, with_common({"methods", "delta_g", "grid", "repeats", "tolerance_kcal", "steering", "interpolation",
                             "dgdiff"}),
             "study");
  eds::StudyConfig s;
  s.seed = seed_of(c);
  s.grid = c.value("grid", s.grid);
  s.repeats = c.value("repeats", s.repeats);
  s.tolerance_kcal = c.value("tolerance_kcal", s.tolerance_kcal);
  s.steering = steering_of(c);
  s.interpolation = interpolation_of(c);
  if (c.contains("dgdiff")) {
    const auto& d = c["dgdiff"];
    check_keys(d, {"step", "dominance", "overlap", "core", "max_tilt", "max_depth"}, "dgdiff");
    s.dgdiff.step = d.value("step", s.dgdiff.step);
    s.dgdiff.dominance = d.value("dominance", s.dgdiff.dominance);
    s.dgdiff.overlap = d.value("overlap", s.dgdiff.overlap);
    s.dgdiff.core = d.value("core", s.dgdiff.core);
    s.dgdiff.max_tilt = d.value("max_tilt", s.dgdiff.max_tilt);
    s.dgdiff.max_depth = d.value("max_depth", s.dgdiff.max_depth);
  }
  const auto methods = c.value("methods", std::vector<std::string>{"unbiased", "steered-tilt"});
  const auto dgs = c.value("delta_g", std::vector<double>{-2, -4, -7, -10, -14});
  std::vector<eds::StudyResult> results;
  json minimal = json::array();
  for (const auto& name : methods) {
    const auto method = eds::parse_study_method(name);
    for (double dg : dgs) {
      results.push_back(eds::study_convergence(dg, method, s));
      const auto& r = results.back();
      minimal.push_back({{"method", name},
                         {"delta_g", r.delta_g},
                         {"minimal_n", r.minimal_n ? json(*r.minimal_n) : json(nullptr)},
                         {"minimal_total_samples", r.minimal_total ? json(*r.minimal_total) : json(nullptr)}});
      std::printf("%-13s delta_g %6.2f  minimal N %s\n", name.c_str(), r.delta_g,
                  r.minimal_n ? std::to_string(*r.minimal_n).c_str() : "not reached");
    }
  }
  auto os = run.open("study.csv");
  eds::write_study_csv(os, results);
  auto rep = run.open("study_repeats.csv");
  eds::write_study_repeats_csv(rep, results);
  run.write_json("minimal.json", minimal);
  return 0;
}

int run_failure_rate(const json& c, RunDir& run) {
  check_keys(c, with_common({"delta_g", "separation", "width", "model", "method", "batch_size", "n_batches", "sizes",
                             "repeats", "either_side", "steering", "interpolation"}),
             "failure-rate");
  const auto model = well_of(c, 0.0);
  const auto method = eds::parse_study_method(c.value("method", std::string("unbiased")));
  if (method == eds::StudyMethod::kDgDiff) throw ConfigError("failure-rate: method must be unbiased or steered-tilt");
  const std::size_t batch = c.value("batch_size", std::size_t{10});
  const std::size_t n_batches = c.value("n_batches", std::size_t{400});
  const auto sizes = c.value("sizes", std::vector<std::size_t>{1, 2, 5, 10, 20});
  const bool either = c.value("either_side", false);
  const double x0 = eds::barrier_location(model);
  auto sc = steering_of(c);
  sc.n_particles = batch;
  const auto bias = eds::BiasPotential::linear_tilt(eds::equalizing_slope(model));
  std::vector<std::vector<double>> membership;
  for (std::size_t b = 0; b < n_batches; ++b) {
    eds::SteeringConfig s = sc;
    s.seed = eds::derive_seed(seed_of(c), 0xfa11ULL, b);
    const auto e = method == eds::StudyMethod::kUnbiased
                       ? eds::sample_unbiased(model, schedule_of(c), s)
                       : eds::steer(model, schedule_of(c), eds::BiasSchedule(bias, interpolation_of(c)), s);
    std::vector<double> m;
    for (const auto& p : e.particles) m.push_back(p.x(0) < x0 ? 1.0 : 0.0);
    membership.push_back(std::move(m));
  }
  const auto rows = eds::failure_rate(membership, sizes, c.value("repeats", std::size_t{200}), seed_of(c), either);
  std::vector<double> closed;
  const auto mm = eds::membership_masses(model, eds::below(x0));
  for (std::size_t n : sizes) {
    if (method != eds::StudyMethod::kUnbiased) {
      closed.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    const double nn = static_cast<double>(n);
    double p = std::pow(mm.inside, nn);
    if (either) p += std::pow(mm.outside, nn);
    closed.push_back(p);
  }
  auto os = run.open("failure_rate.csv");
  eds::write_failure_rate_csv(os, rows, closed);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::printf("n %6zu  rate %.4g (se %.2g)  closed form %.4g\n", rows[i].n, rows[i].rate, rows[i].standard_error,
                closed[i]);
  }
  return 0;
}

int run_oracle(const json& c, RunDir& run) {
  check_keys(c, with_common({"delta_g", "separation", "width", "model", "surface", "cv", "pmf_bins", "pmf_range"}),
             "oracle");
  json out;
  if (c.contains("surface")) {
    const auto surface = surface_of(c, "three-state");
    const auto cv = c.contains("cv") ? eds::cv_from_json(c["cv"]) : eds::CollectiveVariable::projection(0);
    const auto edges = pmf_edges_of(c).value_or(eds::uniform_edges(-3.0, 3.0, c.value("pmf_bins", eds::kDefaultHistogramBins)));
    const auto pmf = eds::exact_pmf(surface.mixture, cv, edges);
    auto os = run.open("pmf.csv");
    eds::write_pmf_csv(os, pmf, &pmf);
    out = {{"surface", eds::to_string(surface.kind)}, {"bins", pmf.size()}};
    std::printf("oracle PMF for %s surface written (%zu bins)\n", std::string(eds::to_string(surface.kind)).c_str(),
                pmf.size());
  } else {
    const auto model = well_of(c, -7.0);
    const double x0 = eds::barrier_location(model);
    const double dg = eds::exact_free_energy_difference(model, eds::below(x0));
    out = {{"delta_g_kbt", dg}, {"delta_g_kcal", dg * eds::kKcalPerKbt300}, {"barrier", x0}};
    std::printf("delta_g = %.3f k_BT (%.3f kcal/mol)\n", dg, dg * eds::kKcalPerKbt300);
  }
  run.write_json("oracle.json", out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Enhanced diffusion sampling experiments"};
  app.require_subcommand(1);
  std::string config_path;
  std::string out_dir = "runs";
  std::string name;
  std::optional<std::uint64_t> seed;
  std::optional<double> dg;
  std::optional<std::size_t> n;
  std::optional<std::string> surface;
  std::optional<std::size_t> bridge;
  CLI::Option* bridge_opt = nullptr;

  struct Sub {
    const char* name;
    const char* help;
    int (*fn)(const json&, RunDir&);
  };
  const std::vector<Sub> subs = {
      {"tilt1d", "steered double well with a linear tilt and direct reweighting", run_tilt1d},
      {"umbrella", "UmbrellaDiff on a 2D surface", run_umbrella},
      {"meta", "MetaDiff on a double well", run_meta},
      {"dg", "Delta-G-Diff tilt ladder", run_dg},
      {"baseline", "Langevin umbrella sampling", run_baseline},
      {"study", "sample-size convergence study", run_study},
      {"failure-rate", "catastrophic failure rate by subsampling", run_failure_rate},
      {"oracle", "quadrature reference values", run_oracle},
  };
  for (const auto& s : subs) {
    auto* sc = app.add_subcommand(s.name, s.help);
    sc->add_option("-c,--config", config_path, "JSON config file");
    sc->add_option("--seed", seed, "random seed");
    sc->add_option("--out", out_dir, "root of the run directories");
    sc->add_option("--name", name, "run name (default: subcommand)");
    const std::string sn = s.name;
    if (sn == "tilt1d" || sn == "meta" || sn == "dg" || sn == "oracle" || sn == "failure-rate") {
      sc->add_option("--dg", dg, "double-well free energy difference (k_BT)");
    }
    if (sn == "tilt1d") sc->add_option("--n", n, "number of particles");
    if (sn == "umbrella" || sn == "baseline" || sn == "oracle") {
      sc->add_option("--surface", surface, "two-state | three-state");
    }
    if (sn == "umbrella") {
      bridge_opt = sc->add_option("--auto-bridge", bridge, "rounds of midpoint insertion")->expected(0, 1)->default_str("2");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  const auto* chosen = app.get_subcommands().front();
  const std::string sub = chosen->get_name();
  const bool bridge_flag = sub == "umbrella" && bridge_opt->count() > 0;
  std::optional<RunDir> run;
  try {
    json cfg = load_config(config_path);
    if (seed) cfg["seed"] = *seed;
    if (dg) cfg["delta_g"] = *dg;
    if (n) cfg["n"] = *n;
    if (surface) cfg["surface"] = *surface;
    if (bridge_flag) cfg["auto_bridge"] = bridge.value_or(2);
    const std::string run_name = !name.empty() ? name : cfg.value("name", sub);
    run.emplace(out_dir, run_name, sub, cfg);
    int status = 0;
    for (const auto& s : subs) {
      if (sub == s.name) status = s.fn(cfg, *run);
    }
    run->finish(status);
    std::printf("run directory: %s\n", run->path().c_str());
    return status;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    if (run) run->finish(2);
    return 2;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    if (run) run->finish(2);
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    if (run) run->finish(3);
    return 3;
  }
}
