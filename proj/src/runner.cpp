#include "ambit/runner.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ambit/errors.hpp"

namespace ambit {

using nlohmann::json;
using Eigen::VectorXd;

namespace {

constexpr int kSchemaVersion = 1;
constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Config helpers
// ---------------------------------------------------------------------------

void check_keys(const json& obj, const std::string& path,
                std::initializer_list<const char*> allowed) {
  for (const auto& [k, v] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (k == a) {
        ok = true;
        break;
      }
    if (!ok)
      throw ConfigError(path.empty() ? k : path + "." + k, "unknown key");
  }
}

const json* find(const json& obj, const std::string& key) {
  auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

double get_number(const json& obj, const std::string& path,
                  const std::string& key, std::optional<double> fallback = {}) {
  const json* v = find(obj, key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(path + "." + key, "required number is missing");
  }
  if (!v->is_number())
    throw ConfigError(path + "." + key, "expected a number");
  return v->get<double>();
}

int get_int(const json& obj, const std::string& path, const std::string& key,
            std::optional<int> fallback = {}) {
  const json* v = find(obj, key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(path + "." + key, "required integer is missing");
  }
  if (!v->is_number_integer())
    throw ConfigError(path + "." + key, "expected an integer");
  return v->get<int>();
}

bool get_bool(const json& obj, const std::string& path, const std::string& key,
              bool fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_boolean())
    throw ConfigError(path + "." + key, "expected a boolean");
  return v->get<bool>();
}

std::string get_string(const json& obj, const std::string& path,
                       const std::string& key,
                       std::optional<std::string> fallback = {}) {
  const json* v = find(obj, key);
  if (!v) {
    if (fallback) return *fallback;
    throw ConfigError(path + "." + key, "required string is missing");
  }
  if (!v->is_string())
    throw ConfigError(path + "." + key, "expected a string");
  return v->get<std::string>();
}

VectorXd as_vector(const json& v, const std::string& path) {
  if (!v.is_array()) throw ConfigError(path, "expected an array of numbers");
  VectorXd out(v.size());
  int i = 0;
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError(path, "expected an array of numbers");
    out[i++] = e.get<double>();
  }
  return out;
}

// Scalar broadcast or per-channel vector.
VectorXd get_channel_vector(const json& obj, const std::string& path,
                            const std::string& key, int channels,
                            std::optional<double> fallback = {}) {
  const json* v = find(obj, key);
  if (!v) {
    if (fallback) return VectorXd::Constant(channels, *fallback);
    throw ConfigError(path + "." + key, "required value is missing");
  }
  if (v->is_number()) return VectorXd::Constant(channels, v->get<double>());
  VectorXd out = as_vector(*v, path + "." + key);
  if (out.size() != channels)
    throw ConfigError(path + "." + key,
                      "expected " + std::to_string(channels) + " entries, got " +
                          std::to_string(out.size()));
  return out;
}

json vector_to_json(const VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

// ---------------------------------------------------------------------------
// Resolved configuration
// ---------------------------------------------------------------------------

struct Resolved {
  json echo;
  DynamicsModel model;
  std::string model_name;
  std::string kind;
  double t0 = 0.0, t1 = 1.0;
  int node_count = 15;
  MeasureOptions opt;

  TrajectoryMetric::Kind tube = TrajectoryMetric::Kind::Linf;
  VectorXd eps;
  TrajectoryMetric z_metric;
  ConstraintExtras extras;
  double rho = 0.0;
  double sigma = 0.0;
  int k1 = 0, k2 = 1;
  std::optional<std::pair<VectorXd, VectorXd>> param_box;
  VectorXd gram_params;
  VectorXd x0, x1, xw;
  std::vector<double> psi_schedule;
  std::vector<std::pair<VectorXd, VectorXd>> pairs;
  std::string out_path;
};

struct ModelDefaults {
  double t0, t1;
};

ModelDefaults model_defaults(const std::string& name) {
  if (name == "chain") return {0.0, 15.0};
  if (name == "vehicles") return {0.0, 20.0};
  if (name == "laub-loomis") return {0.0, 1.2};
  if (name == "afm") return {0.0, 7.0};
  if (name == "heat-rod") return {0.0, 150.0};
  return {0.0, 1.0};
}

DynamicsModel build_model(const json& m, json* echo) {
  const std::string name = get_string(m, "model", "name");
  if (name == "chain") {
    check_keys(m, "model", {"name", "n"});
    const int n = get_int(m, "model", "n", 2);
    if (n < 2 || n > 12)
      throw ConfigError("model.n", "chain order must be in [2, 12]");
    (*echo)["name"] = name;
    (*echo)["n"] = n;
    return chain_system(n);
  }
  if (name == "vehicles") {
    check_keys(m, "model", {"name"});
    (*echo)["name"] = name;
    return vehicle_network();
  }
  if (name == "laub-loomis") {
    check_keys(m, "model", {"name"});
    (*echo)["name"] = name;
    return laub_loomis();
  }
  if (name == "afm") {
    check_keys(m, "model", {"name"});
    (*echo)["name"] = name;
    return afm();
  }
  if (name == "heat-rod") {
    check_keys(m, "model", {"name", "N", "kappa"});
    const int N = get_int(m, "model", "N", 31);
    const double kappa = get_number(m, "model", "kappa", 0.14);
    if (N < 3) throw ConfigError("model.N", "need at least 3 rod cells");
    if (!(kappa > 0)) throw ConfigError("model.kappa", "must be positive");
    (*echo)["name"] = name;
    (*echo)["N"] = N;
    (*echo)["kappa"] = kappa;
    return heat_rod(N, kappa);
  }
  throw ConfigError("model.name", "unknown model '" + name + "'");
}

TrajectoryMetric::Kind parse_metric_kind(const std::string& s,
                                         const std::string& path) {
  if (s == "l2") return TrajectoryMetric::Kind::L2;
  if (s == "linf") return TrajectoryMetric::Kind::Linf;
  if (s == "initial_value_norm") return TrajectoryMetric::Kind::initial_value_norm;
  if (s == "final_value_norm") return TrajectoryMetric::Kind::final_value_norm;
  throw ConfigError(path, "unknown metric kind '" + s + "'");
}

std::string metric_kind_name(TrajectoryMetric::Kind k) {
  switch (k) {
    case TrajectoryMetric::Kind::L2: return "l2";
    case TrajectoryMetric::Kind::Linf: return "linf";
    case TrajectoryMetric::Kind::initial_value_norm: return "initial_value_norm";
    case TrajectoryMetric::Kind::final_value_norm: return "final_value_norm";
  }
  return "";
}

const std::vector<std::string>& measure_kinds() {
  static const std::vector<std::string> kinds = {
      "obs_ambiguity",     "detectability",
      "least_obs_direction", "lp_gain",
      "gramian_gain",      "control_ambiguity",
      "control_ambiguity_region", "control_cost"};
  return kinds;
}

Resolved resolve(const json& config) {
  if (!config.is_object()) throw ConfigError("", "config must be a JSON object");
  check_keys(config, "",
             {"model", "measure", "horizon", "grid", "solver", "output"});
  const json* jm = find(config, "model");
  if (!jm || !jm->is_object())
    throw ConfigError("model", "required section is missing");
  const json* jq = find(config, "measure");
  if (!jq || !jq->is_object())
    throw ConfigError("measure", "required section is missing");

  Resolved r;
  json echo_model = json::object();
  r.model = build_model(*jm, &echo_model);
  r.model_name = r.model.name;

  // --- measure ------------------------------------------------------------
  check_keys(*jq, "measure",
             {"kind", "tube", "epsilon", "z_metric", "fix_initial_state",
              "param_box", "rho", "sigma", "frequencies", "params", "x0", "x1",
              "state_weights", "state_lower", "state_upper", "variation_bounds",
              "psi_schedule", "pairs"});
  r.kind = get_string(*jq, "measure", "kind");
  bool known = false;
  for (const auto& k : measure_kinds()) known = known || k == r.kind;
  if (!known)
    throw ConfigError("measure.kind", "unknown measure '" + r.kind + "'");

  const bool is_obs = r.kind == "obs_ambiguity" || r.kind == "detectability";
  const bool is_gain = r.kind == "lp_gain" || r.kind == "gramian_gain";
  const bool is_control = r.kind == "control_ambiguity" ||
                          r.kind == "control_ambiguity_region" ||
                          r.kind == "control_cost";

  json echo_measure = json::object();
  echo_measure["kind"] = r.kind;

  if (is_obs) {
    r.tube = parse_metric_kind(get_string(*jq, "measure", "tube", "linf"),
                               "measure.tube");
    if (r.tube != TrajectoryMetric::Kind::L2 &&
        r.tube != TrajectoryMetric::Kind::Linf)
      throw ConfigError("measure.tube", "tube metric must be 'l2' or 'linf'");
    r.eps = get_channel_vector(*jq, "measure", "epsilon", r.model.n_y);
    if (!(r.eps.minCoeff() > 0))
      throw ConfigError("measure.epsilon", "tube bounds must be positive");
    echo_measure["tube"] = metric_kind_name(r.tube);
    echo_measure["epsilon"] = vector_to_json(r.eps);
  }
  if (r.kind == "obs_ambiguity") {
    r.z_metric.kind = TrajectoryMetric::Kind::initial_value_norm;
    if (const json* zm = find(*jq, "z_metric")) {
      check_keys(*zm, "measure.z_metric", {"kind", "weights"});
      r.z_metric.kind = parse_metric_kind(
          get_string(*zm, "measure.z_metric", "kind"), "measure.z_metric.kind");
      if (const json* w = find(*zm, "weights")) {
        r.z_metric.weights = as_vector(*w, "measure.z_metric.weights");
        if (r.z_metric.weights.size() != r.model.n_z)
          throw ConfigError("measure.z_metric.weights",
                            "expected one weight per estimand channel (" +
                                std::to_string(r.model.n_z) + ")");
      }
    }
    json zm = json::object();
    zm["kind"] = metric_kind_name(r.z_metric.kind);
    if (r.z_metric.weights.size())
      zm["weights"] = vector_to_json(r.z_metric.weights);
    echo_measure["z_metric"] = zm;
    r.extras.fix_initial_state =
        get_bool(*jq, "measure", "fix_initial_state", false);
    echo_measure["fix_initial_state"] = r.extras.fix_initial_state;
  }
  if (r.kind == "least_obs_direction") {
    r.rho = get_number(*jq, "measure", "rho");
    if (!(r.rho > 0)) throw ConfigError("measure.rho", "must be positive");
    echo_measure["rho"] = r.rho;
  }
  if (is_gain) {
    r.sigma = get_number(*jq, "measure", "sigma");
    if (!(r.sigma > 0)) throw ConfigError("measure.sigma", "must be positive");
    echo_measure["sigma"] = r.sigma;
    if (const json* f = find(*jq, "frequencies")) {
      const VectorXd fr = as_vector(*f, "measure.frequencies");
      if (fr.size() != 2)
        throw ConfigError("measure.frequencies", "expected two frequencies");
      r.k1 = static_cast<int>(fr[0]);
      r.k2 = static_cast<int>(fr[1]);
    }
    echo_measure["frequencies"] = json::array({r.k1, r.k2});
  }
  if (r.kind == "gramian_gain") {
    r.gram_params = r.model.nominal_params;
    if (const json* p = find(*jq, "params")) {
      r.gram_params = as_vector(*p, "measure.params");
      if (r.gram_params.size() != r.model.n_p)
        throw ConfigError("measure.params", "expected " +
                                                std::to_string(r.model.n_p) +
                                                " parameters");
    }
    echo_measure["params"] = vector_to_json(r.gram_params);
  }
  if (const json* pb = find(*jq, "param_box")) {
    check_keys(*pb, "measure.param_box", {"lower", "upper"});
    const json* lo = find(*pb, "lower");
    const json* hi = find(*pb, "upper");
    if (!lo || !hi)
      throw ConfigError("measure.param_box", "needs 'lower' and 'upper'");
    VectorXd l = as_vector(*lo, "measure.param_box.lower");
    VectorXd h = as_vector(*hi, "measure.param_box.upper");
    if (l.size() != r.model.n_p || h.size() != r.model.n_p)
      throw ConfigError("measure.param_box",
                        "expected " + std::to_string(r.model.n_p) +
                            " entries per bound");
    if ((h - l).minCoeff() < 0)
      throw ConfigError("measure.param_box", "lower exceeds upper");
    r.param_box = {l, h};
    r.extras.param_bounds = r.param_box;
    json e = json::object();
    e["lower"] = vector_to_json(l);
    e["upper"] = vector_to_json(h);
    echo_measure["param_box"] = e;
  }
  if (find(*jq, "state_lower") || find(*jq, "state_upper")) {
    const VectorXd lo =
        get_channel_vector(*jq, "measure", "state_lower", r.model.n_x, -kInf);
    const VectorXd hi =
        get_channel_vector(*jq, "measure", "state_upper", r.model.n_x, kInf);
    r.extras.state_bounds = {lo, hi};
    if (find(*jq, "state_lower")) echo_measure["state_lower"] = vector_to_json(lo);
    if (find(*jq, "state_upper")) echo_measure["state_upper"] = vector_to_json(hi);
  }
  if (const json* vb = find(*jq, "variation_bounds")) {
    if (!vb->is_array())
      throw ConfigError("measure.variation_bounds",
                        "expected an array of [channel, V_max] pairs");
    json e = json::array();
    for (const auto& p : *vb) {
      if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() ||
          !p[1].is_number())
        throw ConfigError("measure.variation_bounds",
                          "expected [channel, V_max] pairs");
      const int ch = p[0].get<int>();
      const double vmax = p[1].get<double>();
      if (ch < 0 || ch >= r.model.n_u)
        throw ConfigError("measure.variation_bounds",
                          "control channel " + std::to_string(ch) +
                              " does not exist");
      if (vmax < 0)
        throw ConfigError("measure.variation_bounds", "V_max must be >= 0");
      r.extras.variation_bounds.emplace_back(ch, vmax);
      e.push_back(json::array({ch, vmax}));
    }
    echo_measure["variation_bounds"] = e;
  }

  r.x0 = r.model.nominal_x0;
  if (const json* v = find(*jq, "x0")) {
    r.x0 = as_vector(*v, "measure.x0");
    if (r.x0.size() != r.model.n_x)
      throw ConfigError("measure.x0", "expected " +
                                          std::to_string(r.model.n_x) +
                                          " states");
  }
  echo_measure["x0"] = vector_to_json(r.x0);

  if (is_control) {
    r.xw = get_channel_vector(*jq, "measure", "state_weights", r.model.n_x, 1.0);
    echo_measure["state_weights"] = vector_to_json(r.xw);
  }
  if (r.kind == "control_ambiguity" || r.kind == "control_cost") {
    const json* v = find(*jq, "x1");
    if (!v) throw ConfigError("measure.x1", "required target state is missing");
    r.x1 = as_vector(*v, "measure.x1");
    if (r.x1.size() != r.model.n_x)
      throw ConfigError("measure.x1", "expected " +
                                          std::to_string(r.model.n_x) +
                                          " states");
    echo_measure["x1"] = vector_to_json(r.x1);
  }
  if (r.kind == "control_cost") {
    r.psi_schedule = {1e1, 1e2, 1e3, 1e4};
    if (const json* v = find(*jq, "psi_schedule")) {
      const VectorXd s = as_vector(*v, "measure.psi_schedule");
      if (s.size() == 0 || s.minCoeff() <= 0)
        throw ConfigError("measure.psi_schedule",
                          "expected positive increasing penalties");
      for (int i = 1; i < s.size(); ++i)
        if (s[i] <= s[i - 1])
          throw ConfigError("measure.psi_schedule",
                            "schedule must be strictly increasing");
      r.psi_schedule.assign(s.data(), s.data() + s.size());
    }
    json e = json::array();
    for (double p : r.psi_schedule) e.push_back(p);
    echo_measure["psi_schedule"] = e;
  }
  if (r.kind == "control_ambiguity_region") {
    const json* v = find(*jq, "pairs");
    if (!v || !v->is_array() || v->empty())
      throw ConfigError("measure.pairs", "required non-empty pair list");
    json e = json::array();
    for (const auto& p : *v) {
      check_keys(p, "measure.pairs[]", {"x0", "x1"});
      const json* a = find(p, "x0");
      const json* b = find(p, "x1");
      if (!a || !b)
        throw ConfigError("measure.pairs", "each pair needs 'x0' and 'x1'");
      VectorXd va = as_vector(*a, "measure.pairs[].x0");
      VectorXd vb = as_vector(*b, "measure.pairs[].x1");
      if (va.size() != r.model.n_x || vb.size() != r.model.n_x)
        throw ConfigError("measure.pairs", "state dimension mismatch");
      r.pairs.emplace_back(va, vb);
      json pe = json::object();
      pe["x0"] = vector_to_json(va);
      pe["x1"] = vector_to_json(vb);
      e.push_back(pe);
    }
    echo_measure["pairs"] = e;
  }

  // --- horizon / grid -----------------------------------------------------
  const ModelDefaults md = model_defaults(r.model_name);
  r.t0 = md.t0;
  r.t1 = md.t1;
  if (const json* h = find(config, "horizon")) {
    check_keys(*h, "horizon", {"t0", "t1"});
    r.t0 = get_number(*h, "horizon", "t0", r.t0);
    r.t1 = get_number(*h, "horizon", "t1", r.t1);
  }
  if (!(r.t1 > r.t0)) throw ConfigError("horizon.t1", "must exceed horizon.t0");

  r.node_count = r.kind == "gramian_gain" ? 61 : 15;
  if (const json* g = find(config, "grid")) {
    check_keys(*g, "grid", {"node_count"});
    r.node_count = get_int(*g, "grid", "node_count", r.node_count);
  }
  const int min_nodes = r.kind == "gramian_gain" ? 2 : 5;
  if (r.node_count < min_nodes)
    throw ConfigError("grid.node_count",
                      "need at least " + std::to_string(min_nodes) + " nodes");

  // --- solver -------------------------------------------------------------
  json js = find(config, "solver") ? *find(config, "solver") : json::object();
  check_keys(js, "solver",
             {"starts", "seed", "feasibility_tol", "stationarity_tol",
              "max_outer", "max_inner", "penalty_init", "penalty_growth",
              "penalty_max", "support_max_iter", "support_tol", "dev_scale"});
  r.opt.starts = get_int(js, "solver", "starts", 4);
  if (r.opt.starts < 1) throw ConfigError("solver.starts", "must be >= 1");
  r.opt.seed = static_cast<std::uint64_t>(get_number(js, "solver", "seed", 0.0));
  r.opt.nlp.feasibility_tol =
      get_number(js, "solver", "feasibility_tol", r.opt.nlp.feasibility_tol);
  r.opt.nlp.stationarity_tol =
      get_number(js, "solver", "stationarity_tol", r.opt.nlp.stationarity_tol);
  r.opt.nlp.max_outer = get_int(js, "solver", "max_outer", r.opt.nlp.max_outer);
  r.opt.nlp.max_inner = get_int(js, "solver", "max_inner", r.opt.nlp.max_inner);
  r.opt.nlp.penalty_init =
      get_number(js, "solver", "penalty_init", r.opt.nlp.penalty_init);
  r.opt.nlp.penalty_growth =
      get_number(js, "solver", "penalty_growth", r.opt.nlp.penalty_growth);
  r.opt.nlp.penalty_max =
      get_number(js, "solver", "penalty_max", r.opt.nlp.penalty_max);
  r.opt.support_max_iter =
      get_int(js, "solver", "support_max_iter", r.opt.support_max_iter);
  r.opt.support_tol = get_number(js, "solver", "support_tol", r.opt.support_tol);
  r.opt.initial_dev_scale =
      get_number(js, "solver", "dev_scale", r.opt.initial_dev_scale);

  // --- output -------------------------------------------------------------
  r.out_path = r.model_name + "-" + r.kind + ".json";
  if (const json* o = find(config, "output")) {
    check_keys(*o, "output", {"path"});
    r.out_path = get_string(*o, "output", "path", r.out_path);
  }

  // --- echo ---------------------------------------------------------------
  json echo = json::object();
  echo["model"] = echo_model;
  echo["measure"] = echo_measure;
  echo["horizon"] = {{"t0", r.t0}, {"t1", r.t1}};
  echo["grid"] = {{"node_count", r.node_count}};
  json es = json::object();
  es["starts"] = r.opt.starts;
  es["seed"] = static_cast<double>(r.opt.seed);
  es["feasibility_tol"] = r.opt.nlp.feasibility_tol;
  es["stationarity_tol"] = r.opt.nlp.stationarity_tol;
  es["max_outer"] = r.opt.nlp.max_outer;
  es["max_inner"] = r.opt.nlp.max_inner;
  es["penalty_init"] = r.opt.nlp.penalty_init;
  es["penalty_growth"] = r.opt.nlp.penalty_growth;
  es["penalty_max"] = r.opt.nlp.penalty_max;
  es["support_max_iter"] = r.opt.support_max_iter;
  es["support_tol"] = r.opt.support_tol;
  es["dev_scale"] = r.opt.initial_dev_scale;
  echo["solver"] = es;
  echo["output"] = {{"path", r.out_path}};
  r.echo = echo;
  return r;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

std::string measure_kind_name(MeasureKind k) {
  switch (k) {
    case MeasureKind::obs_ambiguity: return "obs_ambiguity";
    case MeasureKind::least_obs_direction: return "least_obs_direction";
    case MeasureKind::lp_gain: return "lp_gain";
    case MeasureKind::gramian_gain: return "gramian_gain";
    case MeasureKind::control_ambiguity: return "control_ambiguity";
    case MeasureKind::control_cost: return "control_cost";
  }
  return "";
}

std::string status_name(NlpStatus s) {
  switch (s) {
    case NlpStatus::converged: return "converged";
    case NlpStatus::max_iterations: return "max_iterations";
    case NlpStatus::infeasible: return "infeasible";
  }
  return "";
}

json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

std::string trajectory_table(const Trajectory& t, const DynamicsModel& model,
                             int samples = 201) {
  std::string out = "t";
  for (int i = 0; i < model.n_x; ++i) out += "\tx" + std::to_string(i + 1);
  for (int c = 0; c < model.n_u; ++c) out += "\tu" + std::to_string(c + 1);
  out += "\n";
  const CollocationGrid& g = *t.grid;
  VectorXd taus(samples);
  for (int s = 0; s < samples; ++s)
    taus[s] = -1.0 + 2.0 * s / (samples - 1);
  Eigen::MatrixXd xs(model.n_x, samples), us(model.n_u, samples);
  for (int i = 0; i < model.n_x; ++i)
    xs.row(i) = interpolate(g, t.states.row(i).transpose(), taus).transpose();
  for (int c = 0; c < model.n_u; ++c)
    us.row(c) = interpolate(g, t.controls.row(c).transpose(), taus).transpose();
  for (int s = 0; s < samples; ++s) {
    out += fmt17(t.map.to_time(taus[s]));
    for (int i = 0; i < model.n_x; ++i) out += "\t" + fmt17(xs(i, s));
    for (int c = 0; c < model.n_u; ++c) out += "\t" + fmt17(us(c, s));
    out += "\n";
  }
  return out;
}

}  // namespace

json validate_config(const json& config) { return resolve(config).echo; }

RunOutcome execute_config(const json& config) {
  Resolved r = resolve(config);
  const auto t_begin = std::chrono::steady_clock::now();

  const CollocationGrid& grid = lgl_grid(r.node_count);
  const TimeMap horizon(r.t0, r.t1);
  MeasureReport rep;

  if (r.kind == "obs_ambiguity" || r.kind == "detectability" ||
      r.kind == "least_obs_direction") {
    const Trajectory nominal =
        propagate_nominal(r.model, r.x0, r.model.nominal_params, grid, horizon);
    if (r.kind == "obs_ambiguity")
      rep = observability_ambiguity(r.model, nominal, r.tube, r.eps, r.z_metric,
                                    r.extras, r.opt);
    else if (r.kind == "detectability")
      rep = detectability_ambiguity(r.model, nominal, r.tube, r.eps, r.opt);
    else
      rep = least_observable_direction(r.model, nominal, r.rho, r.opt);
  } else if (r.kind == "lp_gain") {
    const FourierControlSpace space(r.k1, r.k2, r.t0, r.t1);
    rep = lp_gain(r.model, r.x0, space, r.sigma, r.param_box, grid, r.opt);
  } else if (r.kind == "gramian_gain") {
    const FourierControlSpace space(r.k1, r.k2, r.t0, r.t1);
    rep = gramian_gain(r.model, r.x0, space, r.sigma, r.gram_params,
                       r.node_count);
  } else if (r.kind == "control_ambiguity") {
    rep = control_ambiguity(r.model, r.x0, r.x1, r.xw, horizon, grid, r.extras,
                            r.opt);
  } else if (r.kind == "control_ambiguity_region") {
    rep = control_ambiguity_region(r.model, r.pairs, r.xw, horizon, grid,
                                   r.extras, r.opt);
  } else if (r.kind == "control_cost") {
    rep = control_cost(r.model, r.x0, r.x1, r.xw, horizon, grid, r.extras,
                       r.psi_schedule, r.opt);
  } else {
    throw ConfigError("measure.kind", "unknown measure '" + r.kind + "'");
  }

  if (r.model_name == "vehicles" && !r.extras.variation_bounds.empty()) {
    // The literally quoted leader input conflicts with the stated variation
    // bound; record the discrepancy and the adopted reading.
    const double tv = vehicle_nominal_variation_quoted();
    std::string flag =
        "nominal-input discrepancy: the quoted leader input has total "
        "variation " +
        fmt17(tv) +
        " on the horizon, exceeding the stated bound; the half-sine reading "
        "(variation 2) is used as the nominal";
    rep.note = rep.note.empty() ? flag : rep.note + "; " + flag;
  }

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_begin)
          .count();

  const bool negative = rep.unreachable ||
                        rep.solver.status == NlpStatus::infeasible;
  json solver = json::object();
  solver["status"] = status_name(rep.solver.status);
  solver["objective_value"] = finite_or_null(rep.solver.objective_value);
  solver["max_eq_violation"] = rep.solver.max_eq_violation;
  solver["max_ineq_violation"] = rep.solver.max_ineq_violation;
  solver["iterations"] = rep.solver.iterations;
  solver["start_index"] = rep.solver.start_index;

  json report = json::object();
  report["measure_kind"] = measure_kind_name(rep.measure_kind);
  report["value"] = rep.value;
  report["sensitivity_ratio"] = rep.sensitivity_ratio;
  report["lower_bound"] = rep.lower_bound_flag;
  report["deviation_norm"] = rep.deviation_norm;
  report["resimulation_residual"] = rep.resimulation_residual;
  report["constraint_margin"] = rep.constraint_margin;
  report["terminal_residual"] = rep.terminal_residual;
  report["unreachable"] = rep.unreachable;
  report["note"] = rep.note;
  report["solver"] = solver;
  json sv = json::array();
  for (double v : rep.start_values) sv.push_back(finite_or_null(v));
  report["start_values"] = sv;
  if (rep.worst_trajectory.states.size()) {
    report["worst_initial_state"] =
        vector_to_json(rep.worst_trajectory.states.col(0));
    report["worst_final_state"] = vector_to_json(
        rep.worst_trajectory.states.col(rep.worst_trajectory.states.cols() - 1));
    report["worst_params"] = vector_to_json(rep.worst_trajectory.params);
  }

  RunOutcome out;
  out.record = json::object();
  out.record["schema_version"] = kSchemaVersion;
  out.record["generator"] = "ambit";
  out.record["config"] = r.echo;
  out.record["wall_clock_seconds"] = wall;
  out.record["verdict"] =
      rep.unreachable ? "unreachable" : status_name(rep.solver.status);
  out.record["report"] = report;
  out.negative_verdict = negative;
  if (rep.worst_trajectory.grid) {
    // The gain measures run on an augmented/simulation model whose channel
    // count differs from the catalog model; size columns from the trajectory.
    DynamicsModel shape = r.model;
    shape.n_x = static_cast<int>(rep.worst_trajectory.states.rows());
    shape.n_u = static_cast<int>(rep.worst_trajectory.controls.rows());
    out.trajectory_table = trajectory_table(rep.worst_trajectory, shape);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization with 17-significant-digit numbers
// ---------------------------------------------------------------------------

namespace {

void dump_json(const json& j, std::string& out, int depth) {
  const std::string pad(2 * depth, ' ');
  const std::string pad1(2 * (depth + 1), ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (const auto& [k, v] : j.items()) {
        if (!first) out += ",\n";
        first = false;
        out += pad1 + json(k).dump() + ": ";
        dump_json(v, out, depth + 1);
      }
      out += "\n" + pad + "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ",\n";
        first = false;
        out += pad1;
        dump_json(v, out, depth + 1);
      }
      out += "\n" + pad + "]";
      return;
    }
    case json::value_t::number_float:
      out += fmt17(j.get<double>());
      return;
    default:
      out += j.dump();
      return;
  }
}

}  // namespace

std::string dump_record(const json& record) {
  std::string out;
  dump_json(record, out, 0);
  out += "\n";
  return out;
}

void write_atomic(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const fs::path tmp = target.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open for writing: " + tmp.string());
    f << content;
    if (!f.good())
      throw std::runtime_error("short write: " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string output_directory() {
  if (const char* d = std::getenv("AMBIT_OUT_DIR"))
    if (*d) return d;
  return ".";
}

// ---------------------------------------------------------------------------
// CLI
// ---------------------------------------------------------------------------

namespace {

json load_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config file " + path + ": " + e.what());
  }
}

std::string record_path(const std::string& out_path) {
  namespace fs = std::filesystem;
  fs::path p(out_path);
  if (p.is_absolute()) return p.string();
  return (fs::path(output_directory()) / p).string();
}

std::string table_path_for(const std::string& record_file) {
  const std::string suffix = ".json";
  if (record_file.size() > suffix.size() &&
      record_file.compare(record_file.size() - suffix.size(), suffix.size(),
                          suffix) == 0)
    return record_file.substr(0, record_file.size() - suffix.size()) +
           ".traj.tsv";
  return record_file + ".traj.tsv";
}

// Runs one config and persists record + trajectory table; returns the record.
RunOutcome run_and_persist(const json& config) {
  RunOutcome out = execute_config(config);
  const std::string rp =
      record_path(out.record["config"]["output"]["path"].get<std::string>());
  write_atomic(rp, dump_record(out.record));
  if (!out.trajectory_table.empty())
    write_atomic(table_path_for(rp), out.trajectory_table);
  return out;
}

int do_run(const std::string& config_file) {
  const json config = load_config_file(config_file);
  RunOutcome out = run_and_persist(config);
  const json& rep = out.record["report"];
  std::cout << rep["measure_kind"].get<std::string>() << " on "
            << out.record["config"]["model"]["name"].get<std::string>()
            << ": value = " << fmt17(rep["value"].get<double>())
            << "  (verdict: " << out.record["verdict"].get<std::string>()
            << ")\n"
            << "record: "
            << record_path(
                   out.record["config"]["output"]["path"].get<std::string>())
            << "\n";
  return out.negative_verdict ? 2 : 0;
}

int do_validate(const std::string& config_file) {
  const json echo = validate_config(load_config_file(config_file));
  std::cout << "config ok\n" << dump_record(echo);
  return 0;
}

int do_list_models() {
  for (const auto& e : model_catalog())
    std::cout << e.name << "\t" << e.description << "\n";
  return 0;
}

// --- canned reproduction bundles ------------------------------------------

struct ReproCase {
  std::string label;
  std::optional<double> paper;  // reference value where the source states one
  json config;
  // Which record field carries the comparable number.
  std::string field = "value";
};

json base_config(const json& model, const json& measure, double t0, double t1,
                 int nodes, int starts, const std::string& out_name) {
  json c = json::object();
  c["model"] = model;
  c["measure"] = measure;
  c["horizon"] = {{"t0", t0}, {"t1", t1}};
  c["grid"] = {{"node_count", nodes}};
  c["solver"] = {{"starts", starts}, {"seed", 0}};
  c["output"] = {{"path", out_name}};
  return c;
}

std::vector<ReproCase> repro_table1() {
  const std::vector<double> paper = {4.70e-6, 2.67e-5, 1.53e-4, 8.89e-4,
                                     5.20e-3, 3.01e-2, 1.75e-1, 1.02};
  std::vector<ReproCase> cases;
  for (int n = 2; n <= 9; ++n) {
    json measure = {{"kind", "obs_ambiguity"},
                    {"tube", "linf"},
                    {"epsilon", 1e-6},
                    {"z_metric", {{"kind", "initial_value_norm"}}}};
    cases.push_back({"chain n=" + std::to_string(n), paper[n - 2],
                     base_config({{"name", "chain"}, {"n", n}}, measure, 0.0,
                                 15.0, 30, 2,
                                 "table1-chain-" + std::to_string(n) + ".json")});
  }
  return cases;
}

std::vector<ReproCase> repro_detectability() {
  json measure = {{"kind", "detectability"}, {"tube", "linf"}, {"epsilon", 1e-6}};
  return {{"chain n=9 final-state", 2.7328e-6,
           base_config({{"name", "chain"}, {"n", 9}}, measure, 0.0, 10.0, 30, 2,
                       "detectability-chain-9.json")}};
}

std::vector<ReproCase> repro_vehicles() {
  auto mk = [](const std::string& label, double paper,
               const std::vector<double>& w, const std::string& out) {
    json measure = {{"kind", "obs_ambiguity"},
                    {"tube", "linf"},
                    {"epsilon", 1e-2},
                    {"z_metric", {{"kind", "linf"}, {"weights", w}}},
                    {"variation_bounds", {{0, 3.0}, {1, 3.0}}}};
    return ReproCase{label, paper,
                     base_config({{"name", "vehicles"}}, measure, 0.0, 20.0, 25,
                                 3, out)};
  };
  return {
      mk("leader position rho_x11", 1.2257, {1, 0, 0, 0}, "vehicles-x11.json"),
      mk("leader velocity rho_x12", 0.5901, {0, 1, 0, 0}, "vehicles-x12.json"),
  };
}

std::vector<ReproCase> repro_laub_loomis() {
  json measure = {{"kind", "obs_ambiguity"},
                  {"tube", "l2"},
                  {"epsilon", 1e-2},
                  {"fix_initial_state", true},
                  {"z_metric", {{"kind", "initial_value_norm"}}},
                  {"param_box",
                   {{"lower", {1.975, 0.775, 0.775}},
                    {"upper", {2.025, 0.825, 0.825}}}}};
  return {{"parameters (k1,k6,k10)", 2.38e-2,
           base_config({{"name", "laub-loomis"}}, measure, 0.0, 1.2, 15, 3,
                       "laub-loomis-params.json")}};
}

std::vector<ReproCase> repro_afm_gain() {
  std::vector<ReproCase> cases;
  for (int k = 0; k <= 8; k += 2) {
    json measure = {{"kind", "lp_gain"},
                    {"sigma", 0.03},
                    {"frequencies", {k, k + 1}},
                    {"param_box", {{"lower", {0.8}}, {"upper", {1.2}}}}};
    const int nodes = std::max(15, 5 * (k + 1) + 10);
    std::optional<double> paper;
    if (k == 0) paper = 2.5707;
    cases.push_back({"W_{" + std::to_string(k) + "," + std::to_string(k + 1) +
                         "}",
                     paper,
                     base_config({{"name", "afm"}}, measure, 0.0, 7.0, nodes, 2,
                                 "afm-gain-w" + std::to_string(k) +
                                     std::to_string(k + 1) + ".json")});
  }
  return cases;
}

std::vector<ReproCase> repro_afm_gramian() {
  std::vector<ReproCase> cases;
  for (int k = 0; k <= 4; k += 2) {
    const std::string ws = std::to_string(k) + std::to_string(k + 1);
    json gram = {{"kind", "gramian_gain"},
                 {"sigma", 0.03},
                 {"frequencies", {k, k + 1}},
                 {"params", {1.0}}};
    cases.push_back({"gramian W_{" + std::to_string(k) + "," +
                         std::to_string(k + 1) + "}",
                     std::nullopt,
                     base_config({{"name", "afm"}}, gram, 0.0, 7.0, 61, 1,
                                 "afm-gramian-w" + ws + ".json")});
    json lp = {{"kind", "lp_gain"},
               {"sigma", 0.03},
               {"frequencies", {k, k + 1}},
               {"param_box", {{"lower", {1.0}}, {"upper", {1.0}}}}};
    const int nodes = std::max(15, 5 * (k + 1) + 10);
    cases.push_back({"optimized W_{" + std::to_string(k) + "," +
                         std::to_string(k + 1) + "} (delta = 1)",
                     std::nullopt,
                     base_config({{"name", "afm"}}, lp, 0.0, 7.0, nodes, 2,
                                 "afm-gramian-lp-w" + ws + ".json")});
  }
  return cases;
}

std::vector<ReproCase> repro_heat_sweep() {
  std::vector<ReproCase> cases;
  const int N = 31;
  for (int i = 0; i <= 6; ++i) {
    const double A = 0.2 * i;
    const VectorXd target = heat_rod_target(N, A);
    const VectorXd w = heat_rod_norm_weights(N);
    json measure = {{"kind", "control_ambiguity"},
                    {"x1", vector_to_json(target)},
                    {"state_weights", vector_to_json(w)},
                    {"state_upper", 2.0}};
    char label[32];
    std::snprintf(label, sizeof label, "arch A=%.1f", A);
    char out[48];
    std::snprintf(out, sizeof out, "heat-sweep-a%02d.json", (int)std::lround(10 * A));
    ReproCase c{label, std::nullopt,
                base_config({{"name", "heat-rod"}}, measure, 0.0, 150.0, 15, 2,
                            out)};
    c.field = "sensitivity_ratio";  // relative control ambiguity
    cases.push_back(c);
  }
  return cases;
}

int do_reproduce(const std::string& id) {
  std::vector<ReproCase> cases;
  if (id == "table1") cases = repro_table1();
  else if (id == "detectability") cases = repro_detectability();
  else if (id == "vehicles") cases = repro_vehicles();
  else if (id == "laub-loomis") cases = repro_laub_loomis();
  else if (id == "afm-gain") cases = repro_afm_gain();
  else if (id == "afm-gramian") cases = repro_afm_gramian();
  else if (id == "heat-sweep") cases = repro_heat_sweep();
  else
    throw ConfigError("reproduce", "unknown experiment id '" + id + "'");

  std::printf("%-42s %14s %14s %10s\n", "case", "reference", "computed",
              "rel.dev");
  int worst = 0;
  for (const auto& c : cases) {
    RunOutcome out = run_and_persist(c.config);
    const double v = out.record["report"][c.field].get<double>();
    if (c.paper) {
      const double rel = (v - *c.paper) / *c.paper;
      std::printf("%-42s %14.6g %14.6g %9.2f%%\n", c.label.c_str(), *c.paper, v,
                  100.0 * rel);
    } else {
      std::printf("%-42s %14s %14.6g %10s\n", c.label.c_str(), "-", v, "-");
    }
    if (out.negative_verdict) worst = 2;
  }
  return worst;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{
      "quantitative observability, gain and reachability measures for "
      "nonlinear control systems"};
  app.require_subcommand(1);

  std::string config_file, experiment;
  CLI::App* run = app.add_subcommand("run", "execute a measure from a config");
  run->add_option("config", config_file, "JSON configuration file")->required();
  CLI::App* validate =
      app.add_subcommand("validate", "parse and validate a config");
  validate->add_option("config", config_file, "JSON configuration file")
      ->required();
  CLI::App* repro = app.add_subcommand(
      "reproduce", "run a canned experiment bundle and compare");
  repro->add_option("id", experiment,
                    "one of: table1, detectability, vehicles, laub-loomis, "
                    "afm-gain, afm-gramian, heat-sweep")
      ->required();
  app.add_subcommand("list-models", "list the shipped model catalog");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) return do_run(config_file);
    if (validate->parsed()) return do_validate(config_file);
    if (repro->parsed()) return do_reproduce(experiment);
    return do_list_models();
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ambit
