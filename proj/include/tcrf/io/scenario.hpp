#pragma once

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "tcrf/flow.hpp"
#include "tcrf/io/checkpoint.hpp"
#include "tcrf/max_time.hpp"
#include "tcrf/symbol.hpp"

namespace tcrf {

using json = nlohmann::json;

struct ScheduleConfig {
  double t_end = 1.0;
  double dt = 0.0;
  double dt_max = 0.05;
  double c_cfl = 0.8;
  std::size_t max_steps = 100000000;
  StepMethod method = StepMethod::etd_rk4;
  std::size_t diag_every = 10;
  bool stop_when_converged = false;
  double tol_conv = 1e-7;

  Schedule schedule() const {
    Schedule s;
    s.t_end = t_end;
    s.dt = dt;
    s.dt_max = dt_max;
    s.c_cfl = c_cfl;
    s.max_steps = max_steps;
    s.method = method;
    s.diag_every = diag_every;
    s.stop_when_converged = stop_when_converged;
    s.tol_conv = tol_conv;
    return s;
  }
};

struct FlowTask {
  double T_prime = 1.0;
  std::optional<BasicField> f;
  ScheduleConfig schedule;
};

struct NormalizedTask {
  Eigen::MatrixXcd theta;
  BasicField h;
  ScheduleConfig schedule;
};

struct T0Task {
  HermitianField beta;
  bool beta_is_rho = true;
  double t_lo = 0.0;
  double t_hi = 100.0;
  double tolerance = 2.5e-4;
  std::string method = "feasibility";  // or "oracle"
  AscentOptions ascent;
};

struct GauduchonTask {
  GauduchonOptions options;
};

struct SymbolTask {
  std::string op = "monge_ampere";
  BasicField w;
  EllipticityOptions options;
};

struct IbpTask {
  int pairs = 50;
  std::uint64_t seed = 1;
  int bandwidth = 3;
  double amplitude = 1.0;
  double tolerance = 1e-9;
};

struct OutputConfig {
  std::filesystem::path directory = "out";
  std::size_t checkpoint_every = 0;
};

/// A parsed, validated scenario file.
struct Scenario {
  json raw;
  std::filesystem::path base_dir;
  ModelPtr model;
  HermitianMetric metric;
  std::string task;  // flow | normalized_flow | t0 | gauduchon | symbol | ibp_check | verify
  FlowTask flow;
  NormalizedTask nflow;
  T0Task t0;
  GauduchonTask gauduchon;
  SymbolTask symbol;
  IbpTask ibp;
  OutputConfig output;
};

namespace scenario_detail {

inline const json& require(const json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(std::string("missing key '") + key + "'", where + "/" + key);
  return j[key];
}

inline double number(const json& j, const char* key, double fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) throw ConfigError(std::string("'") + key + "' must be a number", where + "/" + key);
  const double v = j[key].get<double>();
  if (!std::isfinite(v)) throw ConfigError(std::string("'") + key + "' must be finite", where + "/" + key);
  return v;
}

inline double positive(const json& j, const char* key, double fallback, const std::string& where) {
  const double v = number(j, key, fallback, where);
  if (!(v > 0.0)) throw ConfigError(std::string("'") + key + "' must be positive", where + "/" + key);
  return v;
}

inline long long integer(const json& j, const char* key, long long fallback, const std::string& where,
                         long long lo = 0) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number_integer()) throw ConfigError(std::string("'") + key + "' must be an integer", where + "/" + key);
  const long long v = j[key].get<long long>();
  if (v < lo) throw ConfigError(std::string("'") + key + "' is out of range", where + "/" + key);
  return v;
}

inline bool boolean(const json& j, const char* key, bool fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_boolean()) throw ConfigError(std::string("'") + key + "' must be true or false", where + "/" + key);
  return j[key].get<bool>();
}

inline std::string string(const json& j, const char* key, const std::string& fallback, const std::string& where) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_string()) throw ConfigError(std::string("'") + key + "' must be a string", where + "/" + key);
  return j[key].get<std::string>();
}

/// n×n matrix; entries are numbers or [re, im] pairs. Must be Hermitian.
inline Eigen::MatrixXcd matrix(const json& j, int n, const std::string& where) {
  if (!j.is_array() || static_cast<int>(j.size()) != n) throw ConfigError("matrix must have n rows", where);
  Eigen::MatrixXcd A(n, n);
  for (int r = 0; r < n; ++r) {
    const std::string wr = where + "/" + std::to_string(r);
    if (!j[r].is_array() || static_cast<int>(j[r].size()) != n) throw ConfigError("matrix must be n x n", wr);
    for (int c = 0; c < n; ++c) {
      const json& e = j[r][c];
      const std::string wc = wr + "/" + std::to_string(c);
      if (e.is_number()) {
        A(r, c) = e.get<double>();
      } else if (e.is_array() && e.size() == 2 && e[0].is_number() && e[1].is_number()) {
        A(r, c) = cplx(e[0].get<double>(), e[1].get<double>());
      } else {
        throw ConfigError("matrix entries must be numbers or [re, im] pairs", wc);
      }
    }
  }
  if ((A - A.adjoint()).norm() > 1e-14 * (1.0 + A.norm())) throw ConfigError("matrix must be Hermitian", where);
  return A;
}

inline Eigen::MatrixXcd positive_matrix(const json& j, int n, const std::string& where) {
  Eigen::MatrixXcd A = matrix(j, n, where);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(A, Eigen::EigenvaluesOnly);
  if (!(es.eigenvalues().minCoeff() > 0.0)) throw ConfigError("matrix must be positive definite", where);
  return A;
}

/// One generator term {"amplitude": a, "mode": [k_1, ..., k_2n], "kind": "cos" | "sin"},
/// added to f as a·cos(2π k·x) or a·sin(2π k·x).
inline void add_term(BasicField& f, const json& term, const std::string& where) {
  const ModelPtr& model = f.model;
  const int dims = model->dims();
  if (!term.is_object()) throw ConfigError("term must be an object", where);
  const double a = number(term, "amplitude", 0.0, where);
  const json& mode = require(term, "mode", where);
  if (!mode.is_array() || static_cast<int>(mode.size()) != dims)
    throw ConfigError("mode must list 2n integers", where + "/mode");
  std::vector<int> k(dims);
  for (int d = 0; d < dims; ++d) {
    if (!mode[d].is_number_integer()) throw ConfigError("mode entries must be integers", where + "/mode/" + std::to_string(d));
    k[d] = mode[d].get<int>();
    if (2 * std::abs(k[d]) >= model->N())
      throw ConfigError("mode is not resolved on the grid", where + "/mode/" + std::to_string(d));
  }
  const std::string kind = string(term, "kind", "cos", where);
  if (kind != "cos" && kind != "sin") throw ConfigError("kind must be cos or sin", where + "/kind");
  const bool sine = kind == "sin";
  for (std::size_t i = 0; i < f.size(); ++i) {
    double p = 0.0;
    for (int d = 0; d < dims; ++d) p += k[d] * model->lattice().coordinate(i, d);
    p *= 2.0 * std::numbers::pi;
    f.values[i] += a * (sine ? std::sin(p) : std::cos(p));
  }
}

inline void require_basic(const BasicField& f, const std::string& where) {
  if (!f.model->trivial_holonomy() && basicness_defect(f) > 1e-12)
    throw ConfigError("generator is not invariant under the holonomy group", where);
}

/// Trigonometric generator: a list of terms (see add_term). The result must
/// be basic.
inline BasicField terms(const ModelPtr& model, const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError("generator must be a list of terms", where);
  BasicField f = BasicField::zeros(model);
  for (std::size_t t = 0; t < j.size(); ++t) add_term(f, j[t], where + "/" + std::to_string(t));
  require_basic(f, where);
  return f;
}

inline HermitianMetric metric(const Scenario& sc, const json& j, const std::string& where) {
  const ModelPtr& model = sc.model;
  const int n = model->n();
  if (!j.is_object()) throw ConfigError("metric block must be an object", where);
  const std::string type = string(j, "type", "flat", where);
  Eigen::MatrixXcd A = Eigen::MatrixXcd::Identity(n, n);
  if (j.contains("matrix")) A = positive_matrix(j["matrix"], n, where + "/matrix");
  HermitianField g;
  if (type == "flat") {
    g = HermitianField::constant(model, A);
  } else if (type == "conformal") {
    BasicField f = BasicField::zeros(model);
    // shorthand: a single term given inline
    if (j.contains("amplitude") || j.contains("mode")) {
      add_term(f, j, where);
      require_basic(f, where);
    }
    if (j.contains("terms")) f += terms(model, j["terms"], where + "/terms");
    g = HermitianField::constant(model, A);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = std::exp(f.values[i]);
      for (int a = 0; a < n; ++a) {
        g.diag(a)[i] *= s;
        for (int b = a + 1; b < n; ++b) g.off(a, b)[i] *= s;
      }
    }
  } else if (type == "diagonal") {
    const json& e = require(j, "entries", where);
    if (!e.is_array() || static_cast<int>(e.size()) != n) throw ConfigError("diagonal metric needs n entries", where + "/entries");
    g = HermitianField(model);
    for (int a = 0; a < n; ++a) {
      BasicField f = terms(model, e[a], where + "/entries/" + std::to_string(a));
      for (std::size_t i = 0; i < g.size(); ++i) g.diag(a)[i] = A(a, a).real() * std::exp(f.values[i]);
    }
  } else if (type == "file") {
    const std::filesystem::path p = sc.base_dir / string(j, "path", "", where);
    try {
      g = read_checkpoint(p, model).metric;
    } catch (const CheckpointError& err) {
      throw ConfigError(err.what(), where + "/path");
    }
  } else {
    throw ConfigError("unknown metric type '" + type + "'", where + "/type");
  }
  if (j.contains("ddbar")) g += ddbar(terms(model, j["ddbar"], where + "/ddbar"));
  try {
    return HermitianMetric(std::move(g));
  } catch (const PositivityLoss& err) {
    throw ConfigError(std::string("metric is not positive: ") + err.what(), where);
  } catch (const ContractViolation& err) {
    throw ConfigError(err.what(), where);
  }
}

inline ScheduleConfig schedule(const json& j, const std::string& where) {
  ScheduleConfig s;
  s.t_end = positive(j, "t_end", s.t_end, where);
  s.dt = number(j, "dt", s.dt, where);
  if (s.dt < 0.0) throw ConfigError("'dt' must be non-negative (0 selects the adaptive step)", where + "/dt");
  s.dt_max = positive(j, "dt_max", s.dt_max, where);
  s.c_cfl = positive(j, "c_cfl", s.c_cfl, where);
  s.max_steps = static_cast<std::size_t>(integer(j, "max_steps", static_cast<long long>(s.max_steps), where, 1));
  s.diag_every = static_cast<std::size_t>(integer(j, "diag_every", static_cast<long long>(s.diag_every), where, 0));
  s.stop_when_converged = boolean(j, "stop_when_converged", s.stop_when_converged, where);
  s.tol_conv = positive(j, "tol_conv", s.tol_conv, where);
  const std::string m = string(j, "method", "etd_rk4", where);
  if (m == "rk4") s.method = StepMethod::rk4;
  else if (m == "etd_rk4") s.method = StepMethod::etd_rk4;
  else throw ConfigError("method must be rk4 or etd_rk4", where + "/method");
  return s;
}

}  // namespace scenario_detail

inline const std::vector<std::string>& task_names() {
  static const std::vector<std::string> names{"flow", "normalized_flow", "t0", "gauduchon", "symbol", "ibp_check",
                                              "verify"};
  return names;
}

/// Parses and validates every block; nothing is written. Errors are
/// ConfigError with a JSON pointer to the offending key.
inline Scenario parse_scenario(const json& raw, const std::filesystem::path& base_dir = ".",
                               const std::string& task_override = "") {
  using namespace scenario_detail;
  Scenario sc;
  sc.raw = raw;
  sc.base_dir = base_dir;
  if (!raw.is_object()) throw ConfigError("scenario must be a JSON object", "");
  sc.model = model_from_json(require(raw, "model", ""), "/model");
  const int n = sc.model->n();
  sc.metric = raw.contains("metric") ? metric(sc, raw["metric"], "/metric") : HermitianMetric::flat(sc.model);

  const json empty = json::object();
  const json& task = raw.contains("task") ? raw["task"] : empty;
  if (!task.is_object()) throw ConfigError("task block must be an object", "/task");
  sc.task = string(task, "type", task_override.empty() ? "flow" : task_override, "/task");
  if (std::find(task_names().begin(), task_names().end(), sc.task) == task_names().end())
    throw ConfigError("unknown task type '" + sc.task + "'", "/task/type");
  if (!task_override.empty() && sc.task != task_override)
    throw ConfigError("task type '" + sc.task + "' does not match the requested verb", "/task/type");

  const std::string w = "/task";
  if (sc.task == "flow") {
    sc.flow.schedule = schedule(task, w);
    sc.flow.T_prime = positive(task, "T_prime", std::max(1.0, sc.flow.schedule.t_end), w);
    if (sc.flow.schedule.t_end > sc.flow.T_prime) throw ConfigError("t_end exceeds T_prime", w + "/t_end");
    if (task.contains("f")) sc.flow.f = terms(sc.model, task["f"], w + "/f");
  } else if (sc.task == "normalized_flow") {
    sc.nflow.schedule = schedule(task, w);
    sc.nflow.theta = task.contains("theta") ? positive_matrix(task["theta"], n, w + "/theta")
                                            : Eigen::MatrixXcd(Eigen::MatrixXcd::Identity(n, n));
    sc.nflow.h = task.contains("h") ? terms(sc.model, task["h"], w + "/h") : BasicField::zeros(sc.model);
    // Ω scaled by c adds log c to log Ω
    const double c = positive(task, "omega_scale", 1.0, w);
    for (auto& v : sc.nflow.h.values) v += std::log(c);
  } else if (sc.task == "t0") {
    sc.t0.t_lo = number(task, "t_lo", sc.t0.t_lo, w);
    sc.t0.t_hi = positive(task, "t_hi", sc.t0.t_hi, w);
    if (!(sc.t0.t_lo >= 0.0 && sc.t0.t_lo < sc.t0.t_hi)) throw ConfigError("need 0 <= t_lo < t_hi", w + "/t_lo");
    sc.t0.tolerance = positive(task, "tolerance", sc.t0.tolerance, w);
    sc.t0.method = string(task, "method", sc.t0.method, w);
    if (sc.t0.method != "feasibility" && sc.t0.method != "oracle")
      throw ConfigError("method must be feasibility or oracle", w + "/method");
    sc.t0.ascent.eps_pos = positive(task, "eps_pos", sc.t0.ascent.eps_pos, w);
    sc.t0.ascent.max_iterations = static_cast<std::size_t>(
        integer(task, "max_iterations", static_cast<long long>(sc.t0.ascent.max_iterations), w, 1));
    if (!task.contains("beta") || (task["beta"].is_string() && task["beta"] == "rho")) {
      sc.t0.beta = chern_ricci(sc.metric).rho;
    } else {
      const json& b = task["beta"];
      if (!b.is_object()) throw ConfigError("beta must be \"rho\" or an object", w + "/beta");
      sc.t0.beta_is_rho = false;
      Eigen::MatrixXcd B = b.contains("matrix") ? matrix(b["matrix"], n, w + "/beta/matrix")
                                                : Eigen::MatrixXcd(Eigen::MatrixXcd::Zero(n, n));
      sc.t0.beta = HermitianField::constant(sc.model, B);
      if (b.contains("ddbar")) sc.t0.beta += ddbar(terms(sc.model, b["ddbar"], w + "/beta/ddbar"));
    }
  } else if (sc.task == "gauduchon") {
    sc.gauduchon.options.tolerance = positive(task, "tolerance", sc.gauduchon.options.tolerance, w);
    sc.gauduchon.options.max_iterations =
        static_cast<int>(integer(task, "max_iterations", sc.gauduchon.options.max_iterations, w, 1));
  } else if (sc.task == "symbol") {
    sc.symbol.op = string(task, "operator", sc.symbol.op, w);
    if (sc.symbol.op != "monge_ampere" && sc.symbol.op != "laplacian" && sc.symbol.op != "backward_heat")
      throw ConfigError("operator must be monge_ampere, laplacian or backward_heat", w + "/operator");
    sc.symbol.w = task.contains("w") ? terms(sc.model, task["w"], w + "/w") : BasicField::zeros(sc.model);
    auto& o = sc.symbol.options;
    o.covectors = static_cast<std::size_t>(integer(task, "covectors", static_cast<long long>(o.covectors), w, 1));
    o.points = static_cast<std::size_t>(integer(task, "points", static_cast<long long>(o.points), w, 1));
    o.mu_min = number(task, "mu_min", o.mu_min, w);
    o.symbol.s_max = static_cast<int>(integer(task, "s_max", o.symbol.s_max, w, 1));
  } else if (sc.task == "ibp_check") {
    sc.ibp.pairs = static_cast<int>(integer(task, "pairs", sc.ibp.pairs, w, 1));
    sc.ibp.seed = static_cast<std::uint64_t>(integer(task, "seed", static_cast<long long>(sc.ibp.seed), w));
    sc.ibp.bandwidth = static_cast<int>(integer(task, "bandwidth", sc.ibp.bandwidth, w, 1));
    sc.ibp.amplitude = positive(task, "amplitude", sc.ibp.amplitude, w);
    sc.ibp.tolerance = positive(task, "tolerance", sc.ibp.tolerance, w);
  }

  const json& out = raw.contains("output") ? raw["output"] : empty;
  if (!out.is_object()) throw ConfigError("output block must be an object", "/output");
  sc.output.directory = string(out, "directory", "out", "/output");
  sc.output.checkpoint_every =
      static_cast<std::size_t>(integer(out, "checkpoint_every", 0, "/output"));
  if (out.contains("csv_every")) {
    const auto every = static_cast<std::size_t>(integer(out, "csv_every", 10, "/output"));
    sc.flow.schedule.diag_every = every;
    sc.nflow.schedule.diag_every = every;
  }
  return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path, const std::string& task_override = "") {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario " + path.string(), "");
  json raw;
  try {
    raw = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON: ") + e.what(), "");
  }
  return parse_scenario(raw, path.parent_path().empty() ? "." : path.parent_path(), task_override);
}

}  // namespace tcrf
