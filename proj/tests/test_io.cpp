#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "tcrf/io/runner.hpp"

using namespace tcrf;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("tcrf_test_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path write_scenario(const fs::path& dir, const json& j) {
  const fs::path p = dir / "scenario.json";
  std::ofstream(p) << j.dump(2);
  return p;
}

int run_cli(const std::string& verb, const fs::path& scenario, const fs::path& out, int threads = 1,
            std::optional<fs::path> resume = std::nullopt) {
  cli::RunOptions opt;
  opt.verb = verb;
  opt.scenario = scenario;
  opt.out = out;
  opt.threads = threads;
  opt.resume = resume;
  const int code = cli::run_command(opt);
  set_thread_count(1);
  return code;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

json conformal_flow(double t_end, double dt, std::size_t checkpoint_every) {
  return {{"model", {{"n", 1}, {"N", 16}}},
          {"metric", {{"type", "conformal"}, {"amplitude", 0.1}, {"mode", {1, 0}}}},
          {"task", {{"type", "flow"}, {"t_end", t_end}, {"T_prime", 2.0}, {"dt", dt}, {"diag_every", 50}}},
          {"output", {{"checkpoint_every", checkpoint_every}}}};
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitIdentical) {
  auto m = TransverseModel::create(2, 8);
  std::mt19937_64 rng(1);
  BasicField phi = random_band_limited(m, 2, 0.1, rng);
  HermitianField g = HermitianField::constant(m, Eigen::MatrixXcd::Identity(2, 2)) + 1e-3 * ddbar(phi);
  g.off(0, 1)[5] = cplx(0.25, -0.125);
  Checkpoint c{2, 8, 0.1 + 0.2, TaskId::normalized_flow, phi.values, g};
  const auto bytes = encode_checkpoint(c);
  EXPECT_EQ(bytes.size(), Checkpoint::header_bytes + 8 * m->size() * 5 + 4);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "TCRF");
  Checkpoint d = decode_checkpoint(bytes, m);
  EXPECT_EQ(d.t, c.t);
  EXPECT_EQ(d.task, TaskId::normalized_flow);
  EXPECT_EQ(d.phi, c.phi);
  EXPECT_EQ(encode_checkpoint(d), bytes);
}

TEST(Checkpoint, LayoutIsLittleEndian) {
  auto m = TransverseModel::create(1, 8);
  Checkpoint c{1, 8, 1.0, TaskId::flow, RealArray(m->size(), 0.0), HermitianField::constant(m, Eigen::MatrixXcd::Identity(1, 1))};
  c.phi[0] = -2.0;
  const auto b = encode_checkpoint(c);
  EXPECT_EQ(b[4], 1);  // version
  EXPECT_EQ(b[8], 1);  // n
  EXPECT_EQ(b[12], 8);  // N
  EXPECT_EQ(b[23], 0x3f);  // 1.0 = 0x3ff0000000000000, high byte last
  EXPECT_EQ(b[24], 1);  // task id
  EXPECT_EQ(b[Checkpoint::header_bytes + 7], 0xc0);  // −2.0
}

TEST(Checkpoint, RejectsCorruptionAndMismatch) {
  auto m = TransverseModel::create(1, 8);
  Checkpoint c{1, 8, 0.5, TaskId::flow, RealArray(m->size(), 0.25), HermitianField::constant(m, Eigen::MatrixXcd::Identity(1, 1))};
  auto bytes = encode_checkpoint(c);
  auto flipped = bytes;
  flipped[Checkpoint::header_bytes + 17] ^= 0x01;
  EXPECT_THROW(decode_checkpoint(flipped, m), CheckpointError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic, m), CheckpointError);
  EXPECT_THROW(decode_checkpoint(bytes, TransverseModel::create(1, 16)), CheckpointError);
  bytes.pop_back();
  EXPECT_THROW(decode_checkpoint(bytes, m), CheckpointError);
}

TEST(Scenario, SchemaErrorsCarryPointers) {
  auto pointer_of = [](const json& j) {
    try {
      parse_scenario(j);
    } catch (const ConfigError& e) {
      return e.pointer();
    }
    return std::string("<none>");
  };
  json base = {{"model", {{"n", 1}, {"N", 16}}}, {"task", {{"type", "flow"}}}};
  json bad = base;
  bad["model"]["holonomy"] = json::array({{{"U", {{1, 0}, {0}}}}});
  EXPECT_EQ(pointer_of(bad), "/model/holonomy/0/U/1");
  bad = base;
  bad["task"]["t_end"] = "long";
  EXPECT_EQ(pointer_of(bad), "/task/t_end");
  bad = base;
  bad["metric"] = {{"type", "conformal"}, {"amplitude", 0.1}, {"mode", {1, 0, 0}}};
  EXPECT_EQ(pointer_of(bad), "/metric/mode");
  bad = base;
  bad["metric"] = {{"type", "flat"}, {"matrix", {{-1.0}}}};
  EXPECT_EQ(pointer_of(bad), "/metric/matrix");
  bad = base;
  bad["task"]["type"] = "dance";
  EXPECT_EQ(pointer_of(bad), "/task/type");
  bad = base;
  bad.erase("model");
  EXPECT_EQ(pointer_of(bad), "/model");
  EXPECT_EQ(pointer_of(base), "<none>");
}

TEST(Scenario, NonBasicGeneratorIsRejected) {
  json j = {{"model",
             {{"n", 1}, {"N", 16}, {"holonomy", json::array({{{"U", {{-1, 0}, {0, -1}}}}})}}},
            {"metric", {{"type", "conformal"}, {"amplitude", 0.1}, {"mode", {1, 0}}, {"kind", "sin"}}}};
  try {
    parse_scenario(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.pointer(), "/metric");
  }
}

TEST(Cli, FlatFlowConvergesAtStart) {
  const fs::path dir = scratch("flat");
  json j = {{"model", {{"n", 2}, {"N", 8}}},
            {"metric", {{"type", "flat"}, {"matrix", {{1.0, 0.0}, {0.0, 2.0}}}}},
            {"task", {{"type", "flow"}, {"t_end", 0.2}}}};
  const fs::path sc = write_scenario(dir, j);
  ASSERT_EQ(run_cli("flow", sc, dir / "out"), 0);
  const json s = read_json(dir / "out" / "summary.json");
  EXPECT_TRUE(s["converged"].get<bool>());
  EXPECT_EQ(s["converged_time"].get<double>(), 0.0);
  EXPECT_LE(s["final"]["phi_sup"].get<double>(), 1e-12);
  std::ifstream csv(dir / "out" / "diagnostics.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header.rfind("t,min_eig,rho_sup,osc_phi,dt", 0), 0u);
}

TEST(Cli, MalformedHolonomyExitsWithOnlyErrorReport) {
  const fs::path dir = scratch("malformed");
  json j = {{"model", {{"n", 1}, {"N", 16}, {"holonomy", json::array({{{"U", {{2, 0}, {0, 1}}}}})}}},
            {"task", {{"type", "flow"}}}};
  const fs::path sc = write_scenario(dir, j);
  EXPECT_EQ(run_cli("flow", sc, dir / "out"), 2);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir / "out")) files.push_back(e.path().filename().string());
  ASSERT_EQ(files, std::vector<std::string>{"error.json"});
  const json err = read_json(dir / "out" / "error.json");
  EXPECT_EQ(err["error"], "ConfigError");
  EXPECT_EQ(err["pointer"].get<std::string>().rfind("/model", 0), 0u);
}

TEST(Cli, VerbMustMatchTask) {
  const fs::path dir = scratch("verb");
  const fs::path sc = write_scenario(dir, conformal_flow(0.1, 0.0, 0));
  EXPECT_EQ(run_cli("t0", sc, dir / "out"), 2);
  EXPECT_EQ(read_json(dir / "out" / "error.json")["pointer"], "/task/type");
}

TEST(Cli, PositivityLossExitsWithHaltDiagnostics) {
  const fs::path dir = scratch("halt");
  // ω̂_t = 1 − 2t·cos 2πx reaches zero at t = T′ = 1/2
  json j = {{"model", {{"n", 1}, {"N", 16}}},
            {"task",
             {{"type", "flow"},
              {"t_end", 0.4},
              {"T_prime", 0.5},
              {"f", json::array({{{"amplitude", 1.0 / (std::numbers::pi * std::numbers::pi)}, {"mode", {1, 0}}}})}}}};
  const fs::path sc = write_scenario(dir, j);
  EXPECT_EQ(run_cli("flow", sc, dir / "out"), 3);
  const json err = read_json(dir / "out" / "error.json");
  EXPECT_EQ(err["error"], "InfeasibleHorizon");
}

TEST(Cli, FlowResumeIsBitIdentical) {
  const fs::path dir = scratch("resume");
  const fs::path sc = write_scenario(dir, conformal_flow(1.0, 1e-3, 500));
  ASSERT_EQ(run_cli("flow", sc, dir / "full"), 0);
  ASSERT_TRUE(fs::exists(dir / "full" / "flow_00000500.tcrf"));
  ASSERT_EQ(run_cli("flow", sc, dir / "resumed", 1, dir / "full" / "flow_00000500.tcrf"), 0);
  const std::string a = slurp(dir / "full" / "final.tcrf");
  ASSERT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "resumed" / "final.tcrf"));
  EXPECT_EQ(read_json(dir / "resumed" / "summary.json")["last_step"], 1000);
}

TEST(Cli, WrongGridCheckpointIsRejected) {
  const fs::path dir = scratch("wrong_grid");
  const fs::path sc = write_scenario(dir, conformal_flow(0.01, 1e-3, 5));
  ASSERT_EQ(run_cli("flow", sc, dir / "a"), 0);
  json other = conformal_flow(0.01, 1e-3, 5);
  other["model"]["N"] = 32;
  const fs::path sc2 = write_scenario(dir / "a", other);
  EXPECT_EQ(run_cli("flow", sc2, dir / "b", 1, dir / "a" / "flow_00000005.tcrf"), 2);
  EXPECT_EQ(read_json(dir / "b" / "error.json")["error"], "CheckpointError");
}

TEST(Cli, T0ResumeReproducesBracketSequence) {
  const fs::path dir = scratch("t0");
  json j = {{"model", {{"n", 1}, {"N", 16}}},
            {"task",
             {{"type", "t0"},
              {"t_hi", 10.0},
              {"beta",
               {{"matrix", {{0.5}}},
                {"ddbar", json::array({{{"amplitude", 0.002}, {"mode", {1, 1}}, {"kind", "sin"}}})}}}}},
            {"output", {{"checkpoint_every", 4}}}};
  const fs::path sc = write_scenario(dir, j);
  ASSERT_EQ(run_cli("t0", sc, dir / "full"), 0);
  const json full = read_json(dir / "full" / "summary.json");
  EXPECT_NEAR(full["t0"].get<double>(), 2.0, 1e-3 * 3);
  EXPECT_NEAR(full["oracle"].get<double>(), 2.0, 1e-12);
  ASSERT_EQ(run_cli("t0", sc, dir / "resumed", 1, dir / "full" / "t0_00000008.tcrf"), 0);
  const json res = read_json(dir / "resumed" / "summary.json");
  EXPECT_EQ(res["probes"], full["probes"]);
  EXPECT_EQ(res["t0"], full["t0"]);
  EXPECT_EQ(slurp(dir / "full" / "certificate.tcrf"), slurp(dir / "resumed" / "certificate.tcrf"));
}

TEST(Cli, OutputsIndependentOfThreadsAndReruns) {
  const fs::path dir = scratch("determinism");
  json j = conformal_flow(0.3, 0.0, 100);
  j["model"] = {{"n", 2}, {"N", 8}};
  j["metric"] = {{"type", "diagonal"},
                 {"entries",
                  {json::array({{{"amplitude", 0.1}, {"mode", {1, 0, 0, 0}}}}),
                   json::array({{{"amplitude", 0.05}, {"mode", {0, 1, 1, 0}}, {"kind", "sin"}}})}}};
  const fs::path sc = write_scenario(dir, j);
  ASSERT_EQ(run_cli("flow", sc, dir / "a", 1), 0);
  ASSERT_EQ(run_cli("flow", sc, dir / "b", 3), 0);
  ASSERT_EQ(run_cli("flow", sc, dir / "c", 1), 0);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    const auto name = e.path().filename();
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / name)) << name;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "c" / name)) << name;
    ++compared;
  }
  EXPECT_GE(compared, 4u);
}

TEST(Cli, OtherVerbs) {
  const fs::path dir = scratch("verbs");
  json g = {{"model", {{"n", 2}, {"N", 8}}},
            {"metric", {{"type", "conformal"}, {"amplitude", 0.1}, {"mode", {1, 0, 0, 0}}}},
            {"task", {{"type", "gauduchon"}}}};
  ASSERT_EQ(run_cli("gauduchon", write_scenario(dir, g), dir / "g"), 0);
  EXPECT_LE(read_json(dir / "g" / "summary.json")["residual"].get<double>(), 1e-8);

  json s = {{"model", {{"n", 1}, {"N", 16}}},
            {"task", {{"type", "symbol"}, {"operator", "backward_heat"}, {"covectors", 4}, {"points", 2}}}};
  EXPECT_EQ(run_cli("symbol", write_scenario(dir, s), dir / "s"), 3);
  EXPECT_LE(read_json(dir / "s" / "symbol.json")["mu"].get<double>(), -1.0 + 0.02);

  json i = {{"model", {{"n", 1}, {"N", 16}}}, {"task", {{"type", "ibp_check"}, {"pairs", 5}}}};
  ASSERT_EQ(run_cli("ibp", write_scenario(dir, i), dir / "i"), 0);

  json v = {{"model", {{"n", 2}, {"N", 8}}}, {"metric", g["metric"]}};
  ASSERT_EQ(run_cli("verify", write_scenario(dir, v), dir / "v"), 0);
  EXPECT_TRUE(read_json(dir / "v" / "verify.json")["pass"].get<bool>());

  json n = {{"model", {{"n", 1}, {"N", 16}}},
            {"task", {{"type", "normalized_flow"}, {"t_end", 20.0}, {"stop_when_converged", true}, {"tol_conv", 1e-10},
                      {"h", json::array({{{"amplitude", 0.05}, {"mode", {1, 0}}}})}}}};
  ASSERT_EQ(run_cli("nflow", write_scenario(dir, n), dir / "n"), 0);
  EXPECT_LE(read_json(dir / "n" / "summary.json")["elliptic_residual"].get<double>(), 1e-8);
}

TEST(Scenario, ShippedScenariosParse) {
  int count = 0;
  for (const auto& e : fs::directory_iterator(TCRF_SCENARIO_DIR)) {
    if (e.path().extension() != ".json") continue;
    SCOPED_TRACE(e.path().string());
    EXPECT_NO_THROW(load_scenario(e.path()));
    ++count;
  }
  EXPECT_GE(count, 3);
}
