#pragma once

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tcrf/io/scenario.hpp"

namespace tcrf::cli {

namespace fs = std::filesystem;

enum ExitCode : int { ok = 0, config_error = 2, task_failure = 3 };

struct RunOptions {
  std::string verb;  // flow | nflow | t0 | gauduchon | symbol | ibp | verify
  fs::path scenario;
  std::optional<fs::path> out;
  int threads = 1;
  std::optional<fs::path> resume;
  bool verify = false;
};

/// Failure of the task itself (as opposed to the input); exit status 3.
class TaskFailure : public Error {
 public:
  TaskFailure(std::string kind, const std::string& message, json details = json::object())
      : Error(std::move(kind), message), details_(std::move(details)) {}
  const json& details() const { return details_; }

 private:
  json details_;
};

inline std::shared_ptr<spdlog::logger> logger() {
  static std::shared_ptr<spdlog::logger> log = [] {
    auto l = spdlog::stderr_color_mt("tcrf");
    l->set_pattern("[%l] %v");
    const char* env = std::getenv("TCRF_LOG");
    l->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
    return l;
  }();
  return log;
}

inline std::string verb_task(const std::string& verb) {
  if (verb == "nflow") return "normalized_flow";
  if (verb == "ibp") return "ibp_check";
  return verb;
}

// ---------------------------------------------------------------------------
// output helpers

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  out << j.dump(2) << "\n";
  if (!out) throw CheckpointError("cannot write " + path.string());
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline json matrix_json(const Eigen::MatrixXcd& A) {
  json rows = json::array();
  for (int r = 0; r < A.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < A.cols(); ++c)
      row.push_back(A(r, c).imag() == 0.0 ? json(A(r, c).real()) : json::array({A(r, c).real(), A(r, c).imag()}));
    rows.push_back(row);
  }
  return rows;
}

inline json sample_json(const FlowSample& s) {
  return {{"t", s.t},
          {"dt", s.dt},
          {"min_eig", s.min_eig},
          {"max_eig", s.max_eig},
          {"rho_sup", s.rho_sup},
          {"osc_phi", s.osc_phi},
          {"phi_sup", s.phi_sup},
          {"osc_dphi", s.osc_dphi},
          {"dphi_sup", s.dphi_sup},
          {"basic_defect", s.basic_defect},
          {"volume", s.volume},
          {"limit_deviation", s.limit_deviation}};
}

/// Time series: t, min_eig, ‖ρ‖_∞, osc φ, dt, then the remaining diagnostics.
inline void write_samples_csv(const fs::path& path, const std::vector<FlowSample>& samples) {
  std::ofstream out(path, std::ios::trunc);
  out << "t,min_eig,rho_sup,osc_phi,dt,max_eig,phi_sup,osc_dphi,dphi_sup,basic_defect,volume,limit_deviation\n";
  for (const auto& s : samples) {
    for (double v : {s.t, s.min_eig, s.rho_sup, s.osc_phi, s.dt, s.max_eig, s.phi_sup, s.osc_dphi, s.dphi_sup,
                     s.basic_defect, s.volume})
      out << fmt_double(v) << ',';
    out << fmt_double(s.limit_deviation) << '\n';
  }
}

inline std::string checkpoint_name(const std::string& stem, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%08zu.tcrf", index);
  return stem + buf;
}

/// Checkpoint plus its JSON sidecar `<path>.json`.
inline void save_checkpoint(const fs::path& path, const Checkpoint& c, const json& sidecar) {
  write_checkpoint(path, c);
  write_json(fs::path(path.string() + ".json"), sidecar);
}

struct Resumed {
  Checkpoint checkpoint;
  json sidecar;
};

inline Resumed load_resume(const fs::path& path, const Scenario& sc, TaskId task) {
  Resumed r;
  r.checkpoint = read_checkpoint(path, sc.model);
  if (r.checkpoint.task != task) throw CheckpointError("checkpoint belongs to a different task");
  const fs::path side(path.string() + ".json");
  std::ifstream in(side);
  if (!in) throw CheckpointError("missing checkpoint sidecar " + side.string());
  try {
    r.sidecar = json::parse(in);
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("malformed sidecar: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// tasks

inline json run_verify(const Scenario& sc) {
  const ModelPtr& m = sc.model;
  const int n = m->n();
  std::mt19937_64 rng(12345);
  double ibp = 0.0;
  for (int d = 0; d < 2 * n; ++d) {
    const int p = std::min(d, n), q = d - p;
    const BasicForm a = random_form(m, p, q, 2, 0.1, rng);
    const BasicForm b = p < n ? random_form(m, n - p - 1, n - q, 2, 0.1, rng) : random_form(m, 0, n - q - 1, 2, 0.1, rng);
    ibp = std::max(ibp, check_integration_by_parts(a, b).relative);
  }
  double dd = 0.0;
  for (int deg = 0; deg < 2 * n - 1; ++deg) {
    const int p = std::min(deg, n);
    const BasicForm f = random_form(m, p, deg - p, 3, 0.1, rng);
    dd = std::max(dd, sup_norm(d_B(d_B(f))) / std::max(1.0, sup_norm(f)));
  }
  const double basic = basicness_defect(sc.metric.field());
  const ChernRicciForm rho = chern_ricci(sc.metric);
  const double closed = closedness_defect(rho.rho);
  json checks = {
      {"ibp_relative_residual", {{"value", ibp}, {"tolerance", 1e-9}}},
      {"dd_zero", {{"value", dd}, {"tolerance", 1e-12}}},
      {"metric_basicness_defect", {{"value", basic}, {"tolerance", 1e-12}}},
      {"rho_closedness_defect", {{"value", closed}, {"tolerance", 1e-10}}}};
  bool pass = true;
  for (auto& [name, c] : checks.items()) {
    c["pass"] = c["value"].get<double>() <= c["tolerance"].get<double>();
    pass = pass && c["pass"].get<bool>();
  }
  return {{"checks", checks}, {"pass", pass}};
}

inline json run_flow(const Scenario& sc, const fs::path& out, const std::optional<fs::path>& resume) {
  const FlowTask& task = sc.flow;
  ReferenceChecks checks;
  ReferenceData ref = build_reference(sc.metric, task.T_prime, task.f, 17, &checks);
  FlowIntegrator integ(FlowProblem::from_reference(ref), task.schedule.method);
  Schedule sched = task.schedule.schedule();
  integ.set_state(0.0, BasicField::zeros(sc.model));
  if (resume) {
    const Resumed r = load_resume(*resume, sc, TaskId::flow);
    integ.set_state(r.checkpoint.t, r.checkpoint.phi);
    sched.first_step = r.sidecar.value("step", std::size_t{0});
    logger()->info("resuming flow at t = {} (step {})", r.checkpoint.t, sched.first_step);
  }
  if (sc.output.checkpoint_every) {
    if (sched.stop_when_converged && sched.diag_every && sc.output.checkpoint_every % sched.diag_every != 0)
      throw ConfigError("checkpoint_every must be a multiple of csv_every when stopping on convergence",
                        "/output/checkpoint_every");
    sched.checkpoint_every = sc.output.checkpoint_every;
    sched.on_checkpoint = [&](const FlowIntegrator& it, std::size_t step, const RealArray& values) {
      Checkpoint c{sc.model->n(), sc.model->N(), it.t(), TaskId::flow, values, it.metric()};
      save_checkpoint(out / checkpoint_name("flow", step), c, {{"step", step}, {"task", "flow"}});
      logger()->debug("checkpoint at step {} (t = {})", step, it.t());
    };
  }
  Trajectory traj = run(integ, sched);
  write_samples_csv(out / "diagnostics.csv", traj.samples);
  ConvergenceReport rep = convergence_monitor(traj, sched.tol_conv);
  Checkpoint fin{sc.model->n(), sc.model->N(), traj.final.t, TaskId::flow, traj.final.phi.values, traj.final.omega};
  save_checkpoint(out / "final.tcrf", fin, {{"step", traj.last_step}, {"task", "flow"}});
  double max_defect = 0.0;
  for (const auto& s : traj.samples) max_defect = std::max(max_defect, s.basic_defect);
  const double v0 = traj.samples.front().volume, v1 = traj.samples.back().volume;
  json summary = {{"task", "flow"},
                  {"converged", rep.converged},
                  {"converged_time", rep.converged ? json(rep.converged_time) : json()},
                  {"halt_reason", traj.halt_reason},
                  {"t_final", traj.final.t},
                  {"steps", traj.steps},
                  {"last_step", traj.last_step},
                  {"final", sample_json(traj.final.diagnostics)},
                  {"limit_matrix", matrix_json(traj.final.omega.average())},
                  {"limit_deviation", traj.final.diagnostics.limit_deviation},
                  {"volume_start", v0},
                  {"volume_final", v1},
                  {"volume_relative_change", std::abs(v1 - v0) / v0},
                  {"max_basic_defect", max_defect},
                  {"max_projection_correction", traj.max_projection_correction},
                  {"rho_monotone_after_transient", rep.rho_monotone_after_transient},
                  {"reference",
                   {{"T_prime", task.T_prime},
                    {"log_omega_residual", checks.log_omega_residual},
                    {"endpoint_residual", checks.endpoint_residual},
                    {"min_eigenvalue", checks.min_eigenvalue}}},
                  {"final_checkpoint", "final.tcrf"}};
  if (!traj.halt_reason.empty()) {
    summary["halt"] = {{"point", traj.halt_info.bad_point}, {"min_eig", traj.halt_info.min_eig}};
    write_json(out / "summary.json", summary);
    throw TaskFailure(traj.halt_reason, "flow halted at t = " + fmt_double(traj.final.t), summary["halt"]);
  }
  return summary;
}

inline json run_nflow(const Scenario& sc, const fs::path& out, const std::optional<fs::path>& resume) {
  const NormalizedTask& task = sc.nflow;
  FlowIntegrator integ(normalized_problem(sc.model, task.theta, task.h), task.schedule.method);
  Schedule sched = task.schedule.schedule();
  integ.set_state(0.0, BasicField::zeros(sc.model));
  if (resume) {
    const Resumed r = load_resume(*resume, sc, TaskId::normalized_flow);
    integ.set_state(r.checkpoint.t, r.checkpoint.phi);
    sched.first_step = r.sidecar.value("step", std::size_t{0});
  }
  if (sc.output.checkpoint_every) {
    sched.checkpoint_every = sc.output.checkpoint_every;
    sched.on_checkpoint = [&](const FlowIntegrator& it, std::size_t step, const RealArray& values) {
      Checkpoint c{sc.model->n(), sc.model->N(), it.t(), TaskId::normalized_flow, values, it.metric()};
      save_checkpoint(out / checkpoint_name("nflow", step), c, {{"step", step}, {"task", "normalized_flow"}});
    };
  }
  NormalizedResult res = run_normalized(integ, sched);
  const Trajectory& traj = res.trajectory;
  write_samples_csv(out / "diagnostics.csv", traj.samples);
  ConvergenceReport rep = convergence_monitor(traj, sched.tol_conv, true);
  Checkpoint fin{sc.model->n(), sc.model->N(), traj.final.t, TaskId::normalized_flow, res.phi_infinity.values,
                 traj.final.omega};
  save_checkpoint(out / "final.tcrf", fin, {{"step", traj.last_step}, {"task", "normalized_flow"}});
  json summary = {{"task", "normalized_flow"},
                  {"converged", rep.converged},
                  {"converged_time", rep.converged ? json(rep.converged_time) : json()},
                  {"halt_reason", traj.halt_reason},
                  {"t_final", traj.final.t},
                  {"steps", traj.steps},
                  {"last_step", traj.last_step},
                  {"elliptic_residual", res.elliptic_residual},
                  {"contraction_rate", res.contraction_rate},
                  {"phi_infinity",
                   {{"mean", mean(res.phi_infinity)},
                    {"sup", sup_norm(res.phi_infinity)},
                    {"osc", oscillation(res.phi_infinity)}}},
                  {"final", sample_json(traj.final.diagnostics)},
                  {"final_checkpoint", "final.tcrf"}};
  if (!traj.halt_reason.empty()) {
    write_json(out / "summary.json", summary);
    throw TaskFailure(traj.halt_reason, "normalized flow halted at t = " + fmt_double(traj.final.t));
  }
  return summary;
}

inline const char* status_name(ProbeStatus s) {
  switch (s) {
    case ProbeStatus::feasible: return "feasible";
    case ProbeStatus::infeasible_bound: return "infeasible_bound";
    default: return "inconclusive";
  }
}

inline ProbeStatus status_from(const std::string& s) {
  if (s == "feasible") return ProbeStatus::feasible;
  if (s == "infeasible_bound") return ProbeStatus::infeasible_bound;
  if (s == "inconclusive") return ProbeStatus::inconclusive;
  throw CheckpointError("unknown probe status '" + s + "'");
}

// JSON has no infinities; non-finite values are written as strings
inline json number_json(double v) {
  if (std::isfinite(v)) return v;
  return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
}

inline double number_from(const json& j) {
  if (j.is_number()) return j.get<double>();
  const std::string s = j.get<std::string>();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  return std::numeric_limits<double>::quiet_NaN();
}

inline json probes_json(const std::vector<ProbeResult>& probes) {
  json arr = json::array();
  for (const auto& p : probes)
    arr.push_back({{"t", p.t},
                   {"status", status_name(p.status)},
                   {"margin", number_json(p.margin)},
                   {"upper_bound", number_json(p.upper_bound)},
                   {"iterations", p.iterations}});
  return arr;
}

inline json run_t0(const Scenario& sc, const fs::path& out, const std::optional<fs::path>& resume) {
  const T0Task& task = sc.t0;
  MaxTimeQuery q{sc.metric, task.beta, task.t_lo, task.t_hi, task.tolerance};
  const double oracle = t0_oracle(q);
  json summary = {{"task", "t0"}, {"method", task.method}, {"oracle_infinite", oracle == infinite_time}};
  summary["oracle"] = oracle == infinite_time ? json() : json(oracle);
  if (task.method == "oracle") {
    summary["t0"] = summary["oracle"];
    summary["t0_infinite"] = oracle == infinite_time;
    summary["certificate_file"] = json();
    return summary;
  }
  std::vector<ProbeResult> history;
  if (resume) {
    const Resumed r = load_resume(*resume, sc, TaskId::t0);
    for (const auto& p : r.sidecar.at("probes")) {
      ProbeResult pr;
      pr.t = p.at("t").get<double>();
      pr.status = status_from(p.at("status").get<std::string>());
      pr.margin = number_from(p.at("margin"));
      pr.upper_bound = number_from(p.at("upper_bound"));
      pr.iterations = p.at("iterations").get<std::size_t>();
      history.push_back(std::move(pr));
    }
    // the payload holds the certificate of the last feasible probe
    for (auto it = history.rbegin(); it != history.rend(); ++it)
      if (it->feasible()) {
        it->psi = BasicField(sc.model, r.checkpoint.phi);
        break;
      }
  }
  auto certificate_of = [&](const std::vector<ProbeResult>& probes) {
    for (auto it = probes.rbegin(); it != probes.rend(); ++it)
      if (it->feasible()) return &*it;
    return static_cast<const ProbeResult*>(nullptr);
  };
  std::function<void(const std::vector<ProbeResult>&)> on_probe;
  if (sc.output.checkpoint_every) {
    on_probe = [&](const std::vector<ProbeResult>& probes) {
      logger()->info("probe t = {} -> {}", probes.back().t, status_name(probes.back().status));
      if (probes.size() % sc.output.checkpoint_every) return;
      const ProbeResult* best = certificate_of(probes);
      Checkpoint c{sc.model->n(), sc.model->N(), best ? best->t : 0.0, TaskId::t0,
                   best ? best->psi.values : RealArray(sc.model->size(), 0.0), sc.metric.field()};
      save_checkpoint(out / checkpoint_name("t0", probes.size()), c,
                      {{"step", probes.size()}, {"task", "t0"}, {"probes", probes_json(probes)}});
    };
  }
  T0Result r = t0_feasibility(q, task.ascent, resume ? &history : nullptr, on_probe);
  HermitianField cert_metric = alpha_at(q, r.t_certificate) + ddbar(r.certificate);
  Checkpoint cert{sc.model->n(), sc.model->N(), r.t_certificate, TaskId::t0, r.certificate.values, cert_metric};
  save_checkpoint(out / "certificate.tcrf", cert,
                  {{"step", r.probes.size()}, {"task", "t0"}, {"probes", probes_json(r.probes)}});
  summary["t0"] = r.t0;
  summary["t0_infinite"] = false;
  summary["capped"] = r.capped;
  summary["t_certificate"] = r.t_certificate;
  summary["certificate_margin"] = r.certificate_margin;
  summary["certificate_file"] = "certificate.tcrf";
  summary["monotone"] = r.monotone;
  summary["probes"] = probes_json(r.probes);
  if (oracle != infinite_time) summary["relative_gap"] = std::abs(r.t0 - oracle) / (1.0 + oracle);
  return summary;
}

inline json run_gauduchon(const Scenario& sc, const fs::path& out) {
  GauduchonResult g = gauduchon_factor(sc.metric, sc.gauduchon.options);
  HermitianField gauged = sc.metric.field();
  for (std::size_t i = 0; i < gauged.size(); ++i) {
    const double s = std::exp(g.u.values[i]);
    for (int a = 0; a < gauged.n(); ++a) {
      gauged.diag(a)[i] *= s;
      for (int b = a + 1; b < gauged.n(); ++b) gauged.off(a, b)[i] *= s;
    }
  }
  Checkpoint c{sc.model->n(), sc.model->N(), 0.0, TaskId::gauduchon, g.u.values, gauged};
  save_checkpoint(out / "gauduchon.tcrf", c, {{"step", 0}, {"task", "gauduchon"}});
  return {{"task", "gauduchon"},
          {"residual", g.residual},
          {"min_v", g.min_v},
          {"u_sup", sup_norm(g.u)},
          {"iterations", g.iterations},
          {"file", "gauduchon.tcrf"}};
}

inline json run_symbol(const Scenario& sc, const fs::path& out) {
  const SymbolTask& task = sc.symbol;
  BasicOperator D = task.op == "laplacian"       ? laplacian_operator()
                    : task.op == "backward_heat" ? backward_heat_operator()
                                                 : monge_ampere_operator(sc.metric.field());
  SymbolReport rep = certify_ellipticity(D, task.w, task.options);
  {
    std::ofstream csv(out / "symbol_samples.csv", std::ios::trunc);
    csv << "point,v,ratio,relative_residual";
    for (int a = 0; a < sc.model->dims(); ++a) csv << ",xi" << a;
    csv << "\n";
    for (const auto& s : rep.samples) {
      csv << s.point << ',' << fmt_double(s.v) << ',' << fmt_double(s.ratio) << ',' << fmt_double(s.relative_residual);
      for (double x : s.xi) csv << ',' << fmt_double(x);
      csv << "\n";
    }
  }
  json summary = {{"task", "symbol"},
                  {"operator", rep.operator_name},
                  {"order", rep.order},
                  {"mu", rep.mu},
                  {"mu_min", task.options.mu_min},
                  {"pass", rep.pass},
                  {"complete", rep.complete},
                  {"unresolved", rep.unresolved},
                  {"samples", rep.samples.size()},
                  {"max_relative_residual", rep.max_relative_residual}};
  if (task.op == "monge_ampere") {
    // the closed-form constant for this operator: min over the grid of λ_min(g⁻¹)
    summary["mu_reference"] = 1.0 / eigen_bounds(sc.metric.field()).max;
  }
  if (!rep.pass) {
    write_json(out / "symbol.json", summary);
    throw TaskFailure("NotElliptic", "sampled ellipticity constant " + fmt_double(rep.mu) + " is below mu_min");
  }
  return summary;
}

inline json run_ibp(const Scenario& sc, const fs::path& out) {
  const ModelPtr& m = sc.model;
  const int n = m->n();
  const IbpTask& task = sc.ibp;
  std::mt19937_64 rng(task.seed);
  std::ofstream csv(out / "ibp.csv", std::ios::trunc);
  csv << "pair,deg_alpha,p,q,lhs_re,lhs_im,residual,relative\n";
  double worst = 0.0, worst_rel = 0.0;
  for (int k = 0; k < task.pairs; ++k) {
    // α of bidegree (p, q), β completing (n, n) after one derivative
    const int d = static_cast<int>(rng() % static_cast<unsigned>(2 * n));
    const int p_lo = std::max(0, d - n), p_hi = std::min(d, n);
    const int p = p_lo + static_cast<int>(rng() % static_cast<unsigned>(p_hi - p_lo + 1));
    const int q = d - p;
    int bp = n - p, bq = n - q;
    if (bp > 0 && (bq == 0 || rng() % 2 == 0)) --bp;
    else --bq;
    BasicForm a = random_form(m, p, q, task.bandwidth, 1.0, rng);
    BasicForm b = random_form(m, bp, bq, task.bandwidth, 1.0, rng);
    a *= task.amplitude / std::max(sup_norm(a), 1e-300);
    b *= task.amplitude / std::max(sup_norm(b), 1e-300);
    const IbpReport r = check_integration_by_parts(a, b);
    worst = std::max(worst, r.residual);
    worst_rel = std::max(worst_rel, r.relative);
    csv << k << ',' << d << ',' << p << ',' << q << ',' << fmt_double(r.lhs.real()) << ',' << fmt_double(r.lhs.imag())
        << ',' << fmt_double(r.residual) << ',' << fmt_double(r.relative) << "\n";
  }
  json summary = {{"task", "ibp_check"},
                  {"pairs", task.pairs},
                  {"max_residual", worst},
                  {"max_relative", worst_rel},
                  {"tolerance", task.tolerance},
                  {"pass", worst <= task.tolerance}};
  if (worst > task.tolerance) {
    write_json(out / "summary.json", summary);
    throw TaskFailure("IbpResidual", "integration-by-parts residual " + fmt_double(worst) + " above tolerance");
  }
  return summary;
}

// ---------------------------------------------------------------------------
// entry points

inline json error_report(const Error& e) {
  json j = {{"error", e.kind()}, {"message", e.what()}};
  if (auto* c = dynamic_cast<const ConfigError*>(&e)) j["pointer"] = c->pointer();
  if (auto* p = dynamic_cast<const PositivityLoss*>(&e)) j["halt"] = {{"point", p->point()}, {"min_eig", p->eigenvalue()}};
  if (auto* t = dynamic_cast<const TaskFailure*>(&e)) j["details"] = t->details();
  return j;
}

/// Executes one verb on one scenario. Returns the process exit status.
inline int run_command(const RunOptions& opt) {
  set_thread_count(opt.threads);
  fs::path out = opt.out ? *opt.out : fs::path("out");
  auto fail = [&](const Error& e, int code) {
    std::error_code ec;
    fs::create_directories(out, ec);
    write_json(out / "error.json", error_report(e));
    logger()->error("{}: {}", e.kind(), e.what());
    return code;
  };
  Scenario sc;
  try {
    sc = load_scenario(opt.scenario, verb_task(opt.verb) == "verify" ? "" : verb_task(opt.verb));
    if (!opt.out) out = sc.base_dir / sc.output.directory;
  } catch (const ConfigError& e) {
    if (!opt.out) {
      // best effort: the output directory named by the scenario, if readable
      std::ifstream in(opt.scenario);
      const json raw = json::parse(in, nullptr, false);
      if (raw.is_object() && raw.contains("output") && raw["output"].is_object() &&
          raw["output"].contains("directory") && raw["output"]["directory"].is_string())
        out = opt.scenario.parent_path() / raw["output"]["directory"].get<std::string>();
    }
    return fail(e, config_error);
  } catch (const Error& e) {
    return fail(e, config_error);
  }
  try {
    fs::create_directories(out);
    json verify;
    if (opt.verify || opt.verb == "verify") {
      verify = run_verify(sc);
      write_json(out / "verify.json", verify);
      if (!verify["pass"].get<bool>()) throw TaskFailure("InvariantViolation", "invariant suite failed", verify);
      if (opt.verb == "verify") return ok;
    }
    logger()->info("running {} on n = {}, N = {}", sc.task, sc.model->n(), sc.model->N());
    json summary;
    if (sc.task == "flow") summary = run_flow(sc, out, opt.resume);
    else if (sc.task == "normalized_flow") summary = run_nflow(sc, out, opt.resume);
    else if (sc.task == "t0") summary = run_t0(sc, out, opt.resume);
    else if (opt.resume) throw ConfigError("task '" + sc.task + "' cannot be resumed", "/task/type");
    else if (sc.task == "gauduchon") summary = run_gauduchon(sc, out);
    else if (sc.task == "symbol") summary = run_symbol(sc, out);
    else if (sc.task == "ibp_check") summary = run_ibp(sc, out);
    if (!verify.is_null()) summary["verify"] = verify;
    write_json(out / (sc.task == "symbol" ? "symbol.json" : "summary.json"), summary);
    return ok;
  } catch (const ConfigError& e) {
    return fail(e, config_error);
  } catch (const CheckpointError& e) {
    return fail(e, config_error);
  } catch (const Error& e) {
    return fail(e, task_failure);
  }
}

inline int main(int argc, char** argv) {
  CLI::App app{"Transverse Chern-Ricci flow laboratory"};
  app.require_subcommand(1);
  RunOptions opt;
  std::string out, resume;
  const std::vector<std::pair<std::string, std::string>> verbs{
      {"flow", "integrate the potential flow"},
      {"nflow", "integrate the twisted normalized flow"},
      {"t0", "estimate the maximal existence time"},
      {"gauduchon", "compute the Gauduchon conformal factor"},
      {"symbol", "certify ellipticity of a linearized operator"},
      {"ibp", "check integration by parts on random forms"},
      {"verify", "run the invariant suite on the scenario's model"}};
  for (const auto& [name, help] : verbs) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--scenario", opt.scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "output directory (default: the scenario's output.directory)");
    sub->add_option("--threads", opt.threads, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);
    sub->add_option("--resume", resume, "checkpoint to continue from")->check(CLI::ExistingFile);
    sub->add_flag("--verify", opt.verify, "run the invariant suite before the task");
    sub->callback([&opt, name = name] { opt.verb = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : config_error;
  }
  if (!out.empty()) opt.out = out;
  if (!resume.empty()) opt.resume = resume;
  return run_command(opt);
}

}  // namespace tcrf::cli
