#include "gmukf/harness.hpp"

#include "gmukf/unscented.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <utility>

namespace gmukf {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void bad(const std::string& path, const std::string& msg) {
  fail(ErrorCode::config_error,
       (path.empty() ? std::string("config") : path) + ": " + msg);
}

// Read-only view into a parsed config with the field path carried along so
// every complaint can name the offending field.
struct Cursor {
  const json* node;
  std::string path;

  std::string join(const std::string& key) const {
    return path.empty() ? key : path + "." + key;
  }

  Cursor at(const std::string& key) const {
    if (!node->is_object()) bad(path, "expected an object");
    auto it = node->find(key);
    if (it == node->end()) bad(join(key), "missing required field");
    return {&*it, join(key)};
  }

  std::optional<Cursor> maybe(const std::string& key) const {
    if (!node->is_object()) bad(path, "expected an object");
    auto it = node->find(key);
    if (it == node->end()) return std::nullopt;
    return Cursor{&*it, join(key)};
  }

  void allow_keys(std::initializer_list<const char*> keys) const {
    if (!node->is_object()) bad(path, "expected an object");
    for (const auto& item : node->items()) {
      bool known = std::any_of(keys.begin(), keys.end(), [&](const char* k) {
        return item.key() == k;
      });
      if (!known) bad(join(item.key()), "unknown field");
    }
  }

  std::size_t size() const {
    if (!node->is_array()) bad(path, "expected an array");
    return node->size();
  }

  Cursor item(std::size_t i) const {
    return {&(*node)[i], path + "[" + std::to_string(i) + "]"};
  }

  double number() const {
    if (!node->is_number()) bad(path, "expected a number");
    return node->get<double>();
  }

  int integer() const {
    if (!node->is_number_integer()) bad(path, "expected an integer");
    return node->get<int>();
  }

  std::uint64_t uinteger() const {
    if (!node->is_number_integer() || (node->is_number_integer() &&
                                       !node->is_number_unsigned() &&
                                       node->get<std::int64_t>() < 0))
      bad(path, "expected a non-negative integer");
    return node->get<std::uint64_t>();
  }

  bool boolean() const {
    if (!node->is_boolean()) bad(path, "expected true or false");
    return node->get<bool>();
  }

  std::string text() const {
    if (!node->is_string()) bad(path, "expected a string");
    return node->get<std::string>();
  }
};

Vec parse_vec(const Cursor& c) {
  const std::size_t len = c.size();
  Vec v(static_cast<Eigen::Index>(len));
  for (std::size_t i = 0; i < len; ++i) v[static_cast<Eigen::Index>(i)] = c.item(i).number();
  return v;
}

Mat parse_mat(const Cursor& c) {
  const std::size_t rows = c.size();
  if (rows == 0) bad(c.path, "matrix needs at least one row");
  const std::size_t cols = c.item(0).size();
  if (cols == 0) bad(c.path, "matrix needs at least one column");
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    Cursor row = c.item(i);
    if (row.size() != cols) bad(row.path, "ragged matrix row");
    for (std::size_t j = 0; j < cols; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          row.item(j).number();
  }
  return m;
}

NoiseSpec parse_noise(const Cursor& c) {
  const std::string type = c.at("type").text();
  if (type == "gaussian") {
    c.allow_keys({"type", "sigma"});
    GaussianNoise g;
    if (auto v = c.maybe("sigma")) g.sigma = v->number();
    return g;
  }
  if (type == "mixture") {
    c.allow_keys({"type", "weight1", "mean1", "sigma1", "mean2", "sigma2"});
    MixtureNoise g;
    if (auto v = c.maybe("weight1")) g.weight1 = v->number();
    if (auto v = c.maybe("mean1")) g.mean1 = v->number();
    if (auto v = c.maybe("sigma1")) g.sigma1 = v->number();
    if (auto v = c.maybe("mean2")) g.mean2 = v->number();
    if (auto v = c.maybe("sigma2")) g.sigma2 = v->number();
    return g;
  }
  if (type == "laplace") {
    c.allow_keys({"type", "b"});
    LaplaceNoise g;
    if (auto v = c.maybe("b")) g.b = v->number();
    return g;
  }
  if (type == "cauchy") {
    c.allow_keys({"type", "gamma"});
    CauchyNoise g;
    if (auto v = c.maybe("gamma")) g.gamma = v->number();
    return g;
  }
  bad(c.at("type").path, "unknown noise type '" + type + "'");
}

std::vector<NoiseSpec> parse_noise_list(const Cursor& c) {
  std::vector<NoiseSpec> specs;
  const std::size_t len = c.size();
  specs.reserve(len);
  for (std::size_t i = 0; i < len; ++i) specs.push_back(parse_noise(c.item(i)));
  return specs;
}

OutlierTarget parse_target(const Cursor& c) {
  const std::string s = c.text();
  if (s == "observation") return OutlierTarget::observation;
  if (s == "innovation") return OutlierTarget::innovation;
  bad(c.path, "expected 'observation' or 'innovation'");
}

OutlierSchedule parse_outliers(const Cursor& c) {
  c.allow_keys({"events", "random"});
  OutlierSchedule sched;
  if (auto events = c.maybe("events")) {
    for (std::size_t i = 0; i < events->size(); ++i) {
      Cursor e = events->item(i);
      e.allow_keys({"step", "target", "channel", "magnitude", "duration"});
      OutlierEvent ev;
      ev.step = e.at("step").integer();
      ev.target = parse_target(e.at("target"));
      ev.channel = e.at("channel").integer();
      ev.magnitude = e.at("magnitude").number();
      if (auto v = e.maybe("duration")) ev.duration = v->integer();
      sched.events.push_back(ev);
    }
  }
  if (auto random = c.maybe("random")) {
    for (std::size_t i = 0; i < random->size(); ++i) {
      Cursor r = random->item(i);
      r.allow_keys({"target", "channel", "magnitude", "fraction", "duration"});
      RandomOutliers ro;
      ro.target = parse_target(r.at("target"));
      ro.channel = r.at("channel").integer();
      ro.magnitude = r.at("magnitude").number();
      ro.fraction = r.at("fraction").number();
      if (auto v = r.maybe("duration")) ro.duration = v->integer();
      sched.random.push_back(ro);
    }
  }
  return sched;
}

void parse_model(const Cursor& c, ExperimentConfig& cfg) {
  cfg.model_type = c.at("type").text();
  if (cfg.model_type == "swing") {
    c.allow_keys({"type", "params", "obs_replicas"});
    if (auto params = c.maybe("params")) {
      params->allow_keys({"inertia", "damping", "mech_power", "internal_emf",
                          "bus_voltage", "reactance", "sync_speed", "dt"});
      SwingParams& p = cfg.swing;
      if (auto v = params->maybe("inertia")) p.inertia = v->number();
      if (auto v = params->maybe("damping")) p.damping = v->number();
      if (auto v = params->maybe("mech_power")) p.mech_power = v->number();
      if (auto v = params->maybe("internal_emf")) p.internal_emf = v->number();
      if (auto v = params->maybe("bus_voltage")) p.bus_voltage = v->number();
      if (auto v = params->maybe("reactance")) p.reactance = v->number();
      if (auto v = params->maybe("sync_speed")) p.sync_speed = v->number();
      if (auto v = params->maybe("dt")) p.dt = v->number();
    }
  } else if (cfg.model_type == "linear") {
    c.allow_keys({"type", "A", "C", "obs_replicas"});
    cfg.linear_A = parse_mat(c.at("A"));
    cfg.linear_C = parse_mat(c.at("C"));
  } else {
    bad(c.at("type").path, "unknown model type '" + cfg.model_type + "'");
  }
  if (auto v = c.maybe("obs_replicas")) cfg.obs_replicas = v->integer();
}

void parse_simulation(const Cursor& c, ExperimentConfig& cfg) {
  c.allow_keys({"horizon", "replicates", "seed", "initial", "truth_start",
                "process_noise", "measurement_noise", "outliers"});
  cfg.horizon = c.at("horizon").integer();
  if (auto v = c.maybe("replicates")) cfg.replicates = v->integer();
  if (auto v = c.maybe("seed")) cfg.seed = v->uinteger();
  Cursor initial = c.at("initial");
  initial.allow_keys({"mean", "cov"});
  cfg.initial.mean = parse_vec(initial.at("mean"));
  cfg.initial.cov = parse_mat(initial.at("cov"));
  if (auto v = c.maybe("truth_start")) cfg.truth_start = parse_vec(*v);
  cfg.process_noise = parse_noise_list(c.at("process_noise"));
  cfg.measurement_noise = parse_noise_list(c.at("measurement_noise"));
  if (auto v = c.maybe("outliers")) cfg.outliers = parse_outliers(*v);
}

void parse_filters(const Cursor& c, ExperimentConfig& cfg) {
  c.allow_keys({"ukf", "gmukf", "gm"});
  if (auto v = c.maybe("ukf")) cfg.run_ukf = v->boolean();
  if (auto v = c.maybe("gmukf")) cfg.run_gmukf = v->boolean();
  if (auto gm = c.maybe("gm")) {
    gm->allow_keys({"lambda", "d", "eta_df", "eta_quantile", "irls_tol",
                    "irls_max_iter", "b_m", "force_unit_weights"});
    GMConfig& g = cfg.gm;
    if (auto v = gm->maybe("lambda")) g.lambda = v->number();
    if (auto v = gm->maybe("d")) g.d = v->number();
    if (auto v = gm->maybe("eta_df")) g.eta_df = v->integer();
    if (auto v = gm->maybe("eta_quantile")) g.eta_quantile = v->number();
    if (auto v = gm->maybe("irls_tol")) g.irls_tol = v->number();
    if (auto v = gm->maybe("irls_max_iter")) g.irls_max_iter = v->integer();
    if (auto v = gm->maybe("b_m")) g.b_m = v->number();
    if (auto v = gm->maybe("force_unit_weights")) g.force_unit_weights = v->boolean();
  }
}

void parse_output(const Cursor& c, ExperimentConfig& cfg) {
  c.allow_keys({"dir", "traces", "checks"});
  if (auto v = c.maybe("dir")) cfg.output_dir = v->text();
  if (auto v = c.maybe("traces")) {
    const std::string s = v->text();
    if (s == "all") cfg.traces = TraceOutput::all;
    else if (s == "first") cfg.traces = TraceOutput::first;
    else if (s == "none") cfg.traces = TraceOutput::none;
    else bad(v->path, "expected 'all', 'first' or 'none'");
  }
  if (auto checks = c.maybe("checks")) {
    checks->allow_keys({"max_rmse_gmukf", "max_rmse_ratio", "min_flag_rate",
                        "min_converged_fraction"});
    ExperimentChecks& k = cfg.checks;
    if (auto v = checks->maybe("max_rmse_gmukf")) k.max_rmse_gmukf = v->number();
    if (auto v = checks->maybe("max_rmse_ratio")) k.max_rmse_ratio = v->number();
    if (auto v = checks->maybe("min_flag_rate")) k.min_flag_rate = v->number();
    if (auto v = checks->maybe("min_converged_fraction"))
      k.min_converged_fraction = v->number();
  }
}

int base_measurement_dim(const ExperimentConfig& cfg) {
  return cfg.model_type == "linear" ? static_cast<int>(cfg.linear_C.rows()) : 2;
}

// ---- serialization back to JSON ----

ordered_json vec_json(const Vec& v) {
  ordered_json a = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

ordered_json mat_json(const Mat& m) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

ordered_json noise_json(const NoiseSpec& spec) {
  ordered_json j;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, GaussianNoise>) {
          j["type"] = "gaussian";
          j["sigma"] = s.sigma;
        } else if constexpr (std::is_same_v<T, MixtureNoise>) {
          j["type"] = "mixture";
          j["weight1"] = s.weight1;
          j["mean1"] = s.mean1;
          j["sigma1"] = s.sigma1;
          j["mean2"] = s.mean2;
          j["sigma2"] = s.sigma2;
        } else if constexpr (std::is_same_v<T, LaplaceNoise>) {
          j["type"] = "laplace";
          j["b"] = s.b;
        } else {
          j["type"] = "cauchy";
          j["gamma"] = s.gamma;
        }
      },
      spec);
  return j;
}

ordered_json noise_list_json(const std::vector<NoiseSpec>& specs) {
  ordered_json a = ordered_json::array();
  for (const auto& s : specs) a.push_back(noise_json(s));
  return a;
}

const char* target_name(OutlierTarget t) {
  return t == OutlierTarget::observation ? "observation" : "innovation";
}

ordered_json config_to_json(const ExperimentConfig& cfg) {
  ordered_json j;

  ordered_json model;
  model["type"] = cfg.model_type;
  if (cfg.model_type == "swing") {
    ordered_json p;
    p["inertia"] = cfg.swing.inertia;
    p["damping"] = cfg.swing.damping;
    p["mech_power"] = cfg.swing.mech_power;
    p["internal_emf"] = cfg.swing.internal_emf;
    p["bus_voltage"] = cfg.swing.bus_voltage;
    p["reactance"] = cfg.swing.reactance;
    p["sync_speed"] = cfg.swing.sync_speed;
    p["dt"] = cfg.swing.dt;
    model["params"] = p;
  } else {
    model["A"] = mat_json(cfg.linear_A);
    model["C"] = mat_json(cfg.linear_C);
  }
  model["obs_replicas"] = cfg.obs_replicas;
  j["model"] = model;

  ordered_json sim;
  sim["horizon"] = cfg.horizon;
  sim["replicates"] = cfg.replicates;
  sim["seed"] = cfg.seed;
  sim["initial"] = {{"mean", vec_json(cfg.initial.mean)},
                    {"cov", mat_json(cfg.initial.cov)}};
  sim["truth_start"] =
      vec_json(cfg.truth_start.size() > 0 ? cfg.truth_start : cfg.initial.mean);
  sim["process_noise"] = noise_list_json(cfg.process_noise);
  sim["measurement_noise"] = noise_list_json(cfg.measurement_noise);
  ordered_json outliers;
  ordered_json events = ordered_json::array();
  for (const auto& e : cfg.outliers.events) {
    events.push_back({{"step", e.step},
                      {"target", target_name(e.target)},
                      {"channel", e.channel},
                      {"magnitude", e.magnitude},
                      {"duration", e.duration}});
  }
  ordered_json random = ordered_json::array();
  for (const auto& r : cfg.outliers.random) {
    random.push_back({{"target", target_name(r.target)},
                      {"channel", r.channel},
                      {"magnitude", r.magnitude},
                      {"fraction", r.fraction},
                      {"duration", r.duration}});
  }
  outliers["events"] = events;
  outliers["random"] = random;
  sim["outliers"] = outliers;
  j["simulation"] = sim;

  ordered_json filters;
  filters["ukf"] = cfg.run_ukf;
  filters["gmukf"] = cfg.run_gmukf;
  filters["gm"] = {{"lambda", cfg.gm.lambda},
                   {"d", cfg.gm.d},
                   {"eta_df", cfg.gm.eta_df},
                   {"eta_quantile", cfg.gm.eta_quantile},
                   {"irls_tol", cfg.gm.irls_tol},
                   {"irls_max_iter", cfg.gm.irls_max_iter},
                   {"b_m", cfg.gm.b_m},
                   {"force_unit_weights", cfg.gm.force_unit_weights}};
  j["filters"] = filters;

  ordered_json output;
  output["dir"] = cfg.output_dir;
  output["traces"] = cfg.traces == TraceOutput::all     ? "all"
                     : cfg.traces == TraceOutput::first ? "first"
                                                        : "none";
  ordered_json checks = ordered_json::object();
  if (cfg.checks.max_rmse_gmukf >= 0.0)
    checks["max_rmse_gmukf"] = cfg.checks.max_rmse_gmukf;
  if (cfg.checks.max_rmse_ratio >= 0.0)
    checks["max_rmse_ratio"] = cfg.checks.max_rmse_ratio;
  if (cfg.checks.min_flag_rate >= 0.0)
    checks["min_flag_rate"] = cfg.checks.min_flag_rate;
  if (cfg.checks.min_converged_fraction >= 0.0)
    checks["min_converged_fraction"] = cfg.checks.min_converged_fraction;
  output["checks"] = checks;
  j["output"] = output;

  return j;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::config_error, std::string("invalid JSON: ") + e.what());
  }
  Cursor c{&root, ""};
  c.allow_keys({"model", "simulation", "filters", "output"});
  ExperimentConfig cfg;
  parse_model(c.at("model"), cfg);
  parse_simulation(c.at("simulation"), cfg);
  if (auto filters = c.maybe("filters")) parse_filters(*filters, cfg);
  if (auto output = c.maybe("output")) parse_output(*output, cfg);
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io_error, "cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) fail(ErrorCode::io_error, "failed reading config file '" + path + "'");
  return parse_config(buf.str());
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.model_type != "swing" && cfg.model_type != "linear")
    bad("model.type", "unknown model type '" + cfg.model_type + "'");
  int n = 2;
  if (cfg.model_type == "linear") {
    if (cfg.linear_A.rows() == 0) bad("model.A", "missing transition matrix");
    if (cfg.linear_A.rows() != cfg.linear_A.cols())
      bad("model.A", "transition matrix must be square");
    if (cfg.linear_C.rows() == 0) bad("model.C", "missing observation matrix");
    if (cfg.linear_C.cols() != cfg.linear_A.rows())
      bad("model.C", "observation matrix needs one column per state");
    n = static_cast<int>(cfg.linear_A.rows());
  }
  if (cfg.obs_replicas < 1) bad("model.obs_replicas", "must be at least 1");
  const int m = base_measurement_dim(cfg) * cfg.obs_replicas;

  if (cfg.horizon < 2) bad("simulation.horizon", "must be at least 2");
  if (cfg.replicates < 1) bad("simulation.replicates", "must be at least 1");
  if (cfg.initial.mean.size() != n)
    bad("simulation.initial.mean", "expected length " + std::to_string(n));
  if (cfg.initial.cov.rows() != n || cfg.initial.cov.cols() != n)
    bad("simulation.initial.cov", "expected a " + std::to_string(n) + "x" +
                                      std::to_string(n) + " matrix");
  if (cfg.truth_start.size() != 0 && cfg.truth_start.size() != n)
    bad("simulation.truth_start", "expected length " + std::to_string(n));
  if (static_cast<int>(cfg.process_noise.size()) != n)
    bad("simulation.process_noise",
        "expected one spec per state (" + std::to_string(n) + ")");
  if (static_cast<int>(cfg.measurement_noise.size()) != base_measurement_dim(cfg))
    bad("simulation.measurement_noise",
        "expected one spec per base channel (" +
            std::to_string(base_measurement_dim(cfg)) + ")");
  try {
    for (std::size_t i = 0; i < cfg.process_noise.size(); ++i)
      validate(cfg.process_noise[i]);
  } catch (const Error& e) {
    bad("simulation.process_noise", e.what());
  }
  try {
    for (std::size_t i = 0; i < cfg.measurement_noise.size(); ++i)
      validate(cfg.measurement_noise[i]);
  } catch (const Error& e) {
    bad("simulation.measurement_noise", e.what());
  }
  try {
    validate(cfg.outliers, n, m, cfg.horizon);
  } catch (const Error& e) {
    bad("simulation.outliers", e.what());
  }

  if (!cfg.run_ukf && !cfg.run_gmukf)
    bad("filters", "at least one filter must be enabled");
  try {
    validate(cfg.gm);
  } catch (const Error& e) {
    bad("filters.gm", e.what());
  }

  if (cfg.output_dir.empty()) bad("output.dir", "must not be empty");
  const ExperimentChecks& k = cfg.checks;
  if (k.max_rmse_gmukf >= 0.0 && !cfg.run_gmukf)
    bad("output.checks.max_rmse_gmukf", "requires the GM-UKF to be enabled");
  if (k.max_rmse_ratio >= 0.0 && !(cfg.run_ukf && cfg.run_gmukf))
    bad("output.checks.max_rmse_ratio", "requires both filters to be enabled");
  if (k.min_flag_rate >= 0.0 && !cfg.run_gmukf)
    bad("output.checks.min_flag_rate", "requires the GM-UKF to be enabled");
  if (k.min_flag_rate > 1.0) bad("output.checks.min_flag_rate", "must be in [0, 1]");
  if (k.min_converged_fraction >= 0.0 && !cfg.run_gmukf)
    bad("output.checks.min_converged_fraction", "requires the GM-UKF to be enabled");
  if (k.min_converged_fraction > 1.0)
    bad("output.checks.min_converged_fraction", "must be in [0, 1]");
}

std::string config_json(const ExperimentConfig& cfg) {
  return config_to_json(cfg).dump(2);
}

ExperimentSetup build_setup(const ExperimentConfig& cfg) {
  validate(cfg);
  ExperimentSetup setup;
  const Mat Q = nominal_covariance(cfg.process_noise);
  const Mat R = nominal_covariance(cfg.measurement_noise);
  std::shared_ptr<const DynamicModel> base;
  if (cfg.model_type == "swing") {
    base = std::make_shared<SwingModel>(cfg.swing, Q, R);
  } else {
    base = std::make_shared<LinearModel>(cfg.linear_A, cfg.linear_C, Q, R);
  }
  setup.process_specs = cfg.process_noise;
  if (cfg.obs_replicas > 1) {
    setup.model = std::make_shared<ReplicatedMeasurementModel>(base, cfg.obs_replicas);
    setup.measurement_specs.reserve(cfg.measurement_noise.size() *
                                    static_cast<std::size_t>(cfg.obs_replicas));
    for (int r = 0; r < cfg.obs_replicas; ++r)
      for (const auto& spec : cfg.measurement_noise)
        setup.measurement_specs.push_back(spec);
  } else {
    setup.model = base;
    setup.measurement_specs = cfg.measurement_noise;
  }
  setup.outliers = cfg.outliers;
  setup.truth_start =
      cfg.truth_start.size() > 0 ? cfg.truth_start : cfg.initial.mean;
  return setup;
}

namespace {

// Steps an event occupies, clipped to the horizon. step is 1-based.
std::pair<int, int> event_window(const OutlierEvent& e, int horizon) {
  return {e.step, std::min(e.step + e.duration - 1, horizon)};
}

struct FlagTally {
  long scheduled = 0;
  long flagged_true = 0;
  long flagged_echo = 0;
  long flagged_false = 0;
};

// Compares recorded weights against the expanded schedule. A scheduled row is
// one (step, measurement channel) pair an observation event occupies; it
// counts as detected when its weight dropped below 1. Rows flagged during or
// one step after any event window without being scheduled are echoes (smeared
// history or collateral rows); the remainder are false flags.
FlagTally tally_flags(const std::vector<OutlierEvent>& applied,
                      const Mat& weights, int horizon, int m) {
  FlagTally tally;
  std::set<std::pair<int, int>> scheduled;
  std::vector<char> near_event(static_cast<std::size_t>(horizon) + 1, 0);
  for (const auto& e : applied) {
    auto [first, last] = event_window(e, horizon);
    for (int s = first; s <= std::min(last + 1, horizon); ++s)
      near_event[static_cast<std::size_t>(s)] = 1;
    if (e.target != OutlierTarget::observation) continue;
    for (int s = first; s <= last; ++s) scheduled.insert({s, e.channel});
  }
  tally.scheduled = static_cast<long>(scheduled.size());
  for (int k = 1; k <= horizon; ++k) {
    for (Eigen::Index i = 0; i < weights.cols(); ++i) {
      const double w = weights(k - 1, i);
      if (std::isnan(w) || w >= 1.0) continue;
      if (i < m && scheduled.count({k, static_cast<int>(i)}))
        ++tally.flagged_true;
      else if (near_event[static_cast<std::size_t>(k)])
        ++tally.flagged_echo;
      else
        ++tally.flagged_false;
    }
  }
  return tally;
}

Vec rmse_from_sse(const Vec& sse, long count) {
  if (count == 0) return Vec();
  return (sse / static_cast<double>(count)).cwiseSqrt();
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg) {
  return run_experiment(cfg, build_setup(cfg));
}

RunResult run_experiment(const ExperimentConfig& cfg, const ExperimentSetup& setup) {
  const DynamicModel& model = *setup.model;
  const int n = model.state_dim();
  const int m = model.measurement_dim();
  if (cfg.horizon < 2) fail(ErrorCode::invalid_argument, "horizon must be at least 2");
  if (cfg.replicates < 1) fail(ErrorCode::invalid_argument, "need at least one replicate");
  if (cfg.initial.mean.size() != n)
    fail(ErrorCode::dimension_mismatch, "initial mean does not match the model");
  if (setup.truth_start.size() != n)
    fail(ErrorCode::dimension_mismatch, "truth start does not match the model");
  if (static_cast<int>(setup.process_specs.size()) != n ||
      static_cast<int>(setup.measurement_specs.size()) != m)
    fail(ErrorCode::dimension_mismatch, "noise specs do not match the model");

  RunResult out;
  out.config = cfg;
  out.state_dim = n;
  out.measurement_dim = m;

  Vec ukf_sse = Vec::Zero(n);
  Vec gm_sse = Vec::Zero(n);
  long ukf_steps_pooled = 0;
  long gm_steps_pooled = 0;
  long iter_sum = 0;

  for (int rep = 0; rep < cfg.replicates; ++rep) {
    SimulationTrace clean =
        simulate_clean(model, setup.truth_start, setup.process_specs,
                       setup.measurement_specs, cfg.horizon, cfg.seed,
                       static_cast<std::uint64_t>(rep));
    RngStream outlier_stream(derive_seed(cfg.seed, static_cast<std::uint64_t>(rep),
                                         StreamRole::outlier, 0));
    SimulationTrace trace =
        apply_outliers(clean, setup.outliers, model, setup.process_specs,
                       setup.measurement_specs, outlier_stream);

    ReplicateTrace rt;
    rt.replicate = rep;
    rt.x_true = trace.states.bottomRows(cfg.horizon);
    rt.z = trace.measurements;
    rt.ukf_x = Mat::Constant(cfg.horizon, n, kNaN);
    rt.gmukf_x = Mat::Constant(cfg.horizon, n, kNaN);
    rt.gmukf_cov_diag = Mat::Constant(cfg.horizon, n, kNaN);
    rt.ps = Mat::Constant(cfg.horizon, m + n, kNaN);
    rt.weights = Mat::Constant(cfg.horizon, m + n, kNaN);
    rt.iterations = Vec::Constant(cfg.horizon, kNaN);

    GaussianBelief ukf_belief = cfg.initial;
    GaussianBelief gm_belief = cfg.initial;
    GmHistory history;
    bool ukf_ok = cfg.run_ukf;
    bool gm_ok = cfg.run_gmukf;

    for (int k = 0; k < cfg.horizon; ++k) {
      const Vec z = trace.measurements.row(k).transpose();
      if (ukf_ok) {
        try {
          const GaussianBelief predicted = ukf_predict(ukf_belief, model);
          ukf_belief = ukf_update(predicted, model, z);
          rt.ukf_x.row(k) = ukf_belief.mean.transpose();
        } catch (const std::exception&) {
          ukf_ok = false;
        }
      }
      if (gm_ok) {
        try {
          GmStepResult step = gm_ukf_step(gm_belief, model, z, history, cfg.gm);
          gm_belief =
              GaussianBelief{step.estimate.state, step.estimate.cov};
          rt.gmukf_x.row(k) = step.estimate.state.transpose();
          rt.gmukf_cov_diag.row(k) = step.estimate.cov.diagonal().transpose();
          rt.ps.row(k) = step.diagnostics.ps.transpose();
          rt.weights.row(k) = step.diagnostics.weights.transpose();
          rt.iterations[k] = static_cast<double>(step.estimate.iterations);
          ++out.gm_steps;
          if (step.estimate.converged) ++out.gm_steps_converged;
          iter_sum += step.estimate.iterations;
          const auto& obj = step.estimate.objective;
          for (std::size_t i = 1; i < obj.size(); ++i) {
            const double slack = 1e-10 * std::max(1.0, std::abs(obj[i - 1]));
            if (obj[i] > obj[i - 1] + slack) ++out.objective_violations;
          }
        } catch (const std::exception&) {
          gm_ok = false;
        }
      }
    }

    ReplicateSummary summary;
    summary.index = rep;
    summary.ukf_completed = ukf_ok;
    summary.gmukf_completed = gm_ok;
    const Mat err_ukf = rt.ukf_x - rt.x_true;
    const Mat err_gm = rt.gmukf_x - rt.x_true;
    if (cfg.run_ukf && ukf_ok) {
      summary.ukf_rmse = err_ukf.array().square().colwise().mean().sqrt().matrix().transpose();
      ukf_sse += err_ukf.array().square().colwise().sum().matrix().transpose();
      ukf_steps_pooled += cfg.horizon;
    }
    if (cfg.run_gmukf && gm_ok) {
      summary.gmukf_rmse = err_gm.array().square().colwise().mean().sqrt().matrix().transpose();
      gm_sse += err_gm.array().square().colwise().sum().matrix().transpose();
      gm_steps_pooled += cfg.horizon;
    }
    if ((cfg.run_ukf && !ukf_ok) || (cfg.run_gmukf && !gm_ok))
      ++out.failed_replicates;

    if (cfg.run_gmukf) {
      const FlagTally tally = tally_flags(trace.applied, rt.weights, cfg.horizon, m);
      out.scheduled_rows += tally.scheduled;
      out.flagged_true += tally.flagged_true;
      out.flagged_echo += tally.flagged_echo;
      out.flagged_false += tally.flagged_false;
    }

    out.replicates.push_back(std::move(summary));
    if (cfg.traces == TraceOutput::all ||
        (cfg.traces == TraceOutput::first && rep == 0))
      out.traces.push_back(std::move(rt));
  }

  out.ukf_rmse = rmse_from_sse(ukf_sse, ukf_steps_pooled);
  out.gmukf_rmse = rmse_from_sse(gm_sse, gm_steps_pooled);
  out.mean_irls_iterations =
      out.gm_steps > 0 ? static_cast<double>(iter_sum) / static_cast<double>(out.gm_steps)
                       : 0.0;

  const ExperimentChecks& k = cfg.checks;
  out.checks_evaluated = k.any();
  auto check_failed = [&out](const std::string& msg) {
    out.checks_passed = false;
    out.check_failures.push_back(msg);
  };
  if (k.max_rmse_gmukf >= 0.0) {
    if (out.gmukf_rmse.size() == 0)
      check_failed("max_rmse_gmukf: no completed GM-UKF replicates");
    else if (out.gmukf_rmse.maxCoeff() > k.max_rmse_gmukf)
      check_failed("max_rmse_gmukf: worst state RMSE " +
                   fmt17(out.gmukf_rmse.maxCoeff()) + " exceeds " +
                   fmt17(k.max_rmse_gmukf));
  }
  if (k.max_rmse_ratio >= 0.0) {
    if (out.gmukf_rmse.size() == 0 || out.ukf_rmse.size() == 0) {
      check_failed("max_rmse_ratio: missing completed replicates for a filter");
    } else {
      const double ratio =
          (out.gmukf_rmse.array() / out.ukf_rmse.array()).maxCoeff();
      if (ratio > k.max_rmse_ratio)
        check_failed("max_rmse_ratio: worst state ratio " + fmt17(ratio) +
                     " exceeds " + fmt17(k.max_rmse_ratio));
    }
  }
  if (k.min_flag_rate >= 0.0) {
    if (out.scheduled_rows == 0) {
      check_failed("min_flag_rate: no scheduled observation outlier rows");
    } else {
      const double rate = static_cast<double>(out.flagged_true) /
                          static_cast<double>(out.scheduled_rows);
      if (rate < k.min_flag_rate)
        check_failed("min_flag_rate: detection rate " + fmt17(rate) +
                     " below " + fmt17(k.min_flag_rate));
    }
  }
  if (k.min_converged_fraction >= 0.0) {
    const double fraction =
        out.gm_steps > 0 ? static_cast<double>(out.gm_steps_converged) /
                               static_cast<double>(out.gm_steps)
                         : 0.0;
    if (fraction < k.min_converged_fraction)
      check_failed("min_converged_fraction: " + fmt17(fraction) + " below " +
                   fmt17(k.min_converged_fraction));
  }

  return out;
}

namespace {

ordered_json rmse_json(const Vec& rmse) {
  if (rmse.size() == 0) return nullptr;
  return vec_json(rmse);
}

void write_trace_csv(const ReplicateTrace& rt, double dt, const std::string& path) {
  std::ofstream csv(path);
  if (!csv) fail(ErrorCode::io_error, "cannot open '" + path + "' for writing");
  const int n = static_cast<int>(rt.x_true.cols());
  const int m = static_cast<int>(rt.z.cols());
  const int rows = static_cast<int>(rt.x_true.rows());

  csv << "step,t";
  for (int j = 0; j < n; ++j) csv << ",x_true_" << j;
  for (int j = 0; j < m; ++j) csv << ",z_" << j;
  for (int j = 0; j < n; ++j) csv << ",ukf_x_" << j;
  for (int j = 0; j < n; ++j) csv << ",gmukf_x_" << j;
  for (int j = 0; j < m + n; ++j) csv << ",gmukf_ps_" << j;
  for (int j = 0; j < m + n; ++j) csv << ",gmukf_w_" << j;
  csv << ",gmukf_iters\n";

  for (int k = 0; k < rows; ++k) {
    csv << (k + 1) << ',' << fmt17(static_cast<double>(k + 1) * dt);
    for (int j = 0; j < n; ++j) csv << ',' << fmt17(rt.x_true(k, j));
    for (int j = 0; j < m; ++j) csv << ',' << fmt17(rt.z(k, j));
    for (int j = 0; j < n; ++j) csv << ',' << fmt17(rt.ukf_x(k, j));
    for (int j = 0; j < n; ++j) csv << ',' << fmt17(rt.gmukf_x(k, j));
    for (int j = 0; j < m + n; ++j) csv << ',' << fmt17(rt.ps(k, j));
    for (int j = 0; j < m + n; ++j) csv << ',' << fmt17(rt.weights(k, j));
    csv << ',' << fmt17(rt.iterations[k]) << '\n';
  }
  csv.flush();
  if (!csv) fail(ErrorCode::io_error, "failed writing '" + path + "'");
}

}  // namespace

std::string summary_json(const RunResult& result) {
  ordered_json j;
  j["config"] = config_to_json(result.config);
  j["state_dim"] = result.state_dim;
  j["measurement_dim"] = result.measurement_dim;
  j["failed_replicates"] = result.failed_replicates;

  j["rmse"] = {{"ukf", rmse_json(result.ukf_rmse)},
               {"gmukf", rmse_json(result.gmukf_rmse)}};

  ordered_json reps = ordered_json::array();
  for (const auto& r : result.replicates) {
    reps.push_back({{"index", r.index},
                    {"ukf_completed", r.ukf_completed},
                    {"gmukf_completed", r.gmukf_completed},
                    {"ukf_rmse", rmse_json(r.ukf_rmse)},
                    {"gmukf_rmse", rmse_json(r.gmukf_rmse)}});
  }
  j["replicates"] = reps;

  j["gm"] = {{"steps", result.gm_steps},
             {"converged", result.gm_steps_converged},
             {"mean_irls_iterations", result.mean_irls_iterations},
             {"objective_violations", result.objective_violations}};

  j["outliers"] = {{"scheduled_rows", result.scheduled_rows},
                   {"flagged_true", result.flagged_true},
                   {"flagged_echo", result.flagged_echo},
                   {"flagged_false", result.flagged_false}};

  j["checks"] = {{"evaluated", result.checks_evaluated},
                 {"passed", result.checks_passed},
                 {"failures", result.check_failures}};
  return j.dump(2);
}

void write_outputs(const RunResult& result, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::io_error, "cannot create output directory '" + dir +
                                        "': " + ec.message());

  const double dt =
      result.config.model_type == "swing" ? result.config.swing.dt : 1.0;
  for (const auto& rt : result.traces) {
    char name[48];
    std::snprintf(name, sizeof(name), "replicate_%03d.csv", rt.replicate);
    write_trace_csv(rt, dt, dir + "/" + name);
  }

  const std::string path = dir + "/summary.json";
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io_error, "cannot open '" + path + "' for writing");
  out << summary_json(result) << '\n';
  out.flush();
  if (!out) fail(ErrorCode::io_error, "failed writing '" + path + "'");
}

}  // namespace gmukf
