#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "json.hpp"
#include "mpaudit/milp.h"

namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = -1;
  std::string output;
};

fs::path Scratch(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / "mpaudit_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string Slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Runs the CLI with `args` inside `dir`, capturing stdout and stderr.
Outcome RunCli(const fs::path& dir, const std::string& args) {
  const fs::path log = dir / "cli.log";
  const std::string command = "cd '" + dir.string() + "' && '" MPAUDIT_CLI_PATH "' " +
                              args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(command.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, Slurp(log)};
}

void WriteJson(const fs::path& path, const nlohmann::json& j) {
  std::ofstream(path) << j.dump(2);
}

nlohmann::json SmallConfig() {
  return {{"data", {{"synthetic", {{"kind", "separability"}, {"sigma", 4}, {"n_total", 40}}}}},
          {"epsilon_grid", {0.01, 0.05}},
          {"delta_grid", {0.1, 0.2}},
          {"metrics", {"log_loss"}},
          {"run_milp", false},
          {"out_dir", "out"}};
}

TEST(Cli, UsageErrorsExitTwo) {
  const fs::path dir = Scratch("usage");
  EXPECT_EQ(RunCli(dir, "").code, 2);
  EXPECT_EQ(RunCli(dir, "audit --bogus").code, 2);
  EXPECT_EQ(RunCli(dir, "gen-synth").code, 2);  // --kind is required.
  EXPECT_EQ(RunCli(dir, "--help").code, 0);
  const Outcome missing = RunCli(dir, "audit --config nowhere.json");
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.output.find("nowhere.json"), std::string::npos);
}

TEST(Cli, MissingLabelColumnIsNamed) {
  const fs::path dir = Scratch("label");
  std::ofstream(dir / "d.csv") << "a,b,outcome\n1,2,1\n2,1,0\n";
  WriteJson(dir / "c.json", {{"data", {{"csv", {{"path", "d.csv"}, {"label", "target"}}}}}});
  const Outcome r = RunCli(dir, "train --config c.json");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("target"), std::string::npos) << r.output;
}

TEST(Cli, TrainIsByteReproducible) {
  const fs::path dir = Scratch("train");
  WriteJson(dir / "c.json", SmallConfig());
  ASSERT_EQ(RunCli(dir, "train --config c.json").code, 0);
  const std::string model = Slurp(dir / "out" / "model.json");
  const std::string metrics = Slurp(dir / "out" / "metrics.json");
  ASSERT_EQ(RunCli(dir, "train --config c.json --out-dir again").code, 0);
  EXPECT_EQ(Slurp(dir / "again" / "model.json"), model);
  EXPECT_EQ(Slurp(dir / "again" / "metrics.json"), metrics);
  const auto m = nlohmann::json::parse(metrics);
  EXPECT_EQ(m.at("train").at("n"), 40);
  EXPECT_TRUE(m.at("eval").is_null());
}

TEST(Cli, SolverFailureExitsThree) {
  const fs::path dir = Scratch("solver");
  nlohmann::json j = SmallConfig();
  j["train"] = {{"max_iters", 1}};
  WriteJson(dir / "c.json", j);
  EXPECT_EQ(RunCli(dir, "train --config c.json").code, 3);
}

TEST(Cli, AuditExitReflectsLimits) {
  const fs::path dir = Scratch("audit");
  nlohmann::json j = SmallConfig();
  WriteJson(dir / "full.json", j);
  const Outcome ok = RunCli(dir, "audit --config full.json");
  EXPECT_EQ(ok.code, 0) << ok.output;
  EXPECT_TRUE(fs::exists(dir / "out" / "report.json"));

  j["run_milp"] = true;
  j["milp_cells"] = {{0.05, 0.2}};
  j["milp"] = {{"node_limit", 1}};
  j["out_dir"] = "limited";
  WriteJson(dir / "limited.json", j);
  const Outcome limited = RunCli(dir, "audit --config limited.json");
  const auto report = nlohmann::json::parse(Slurp(dir / "limited" / "report.json"));
  EXPECT_EQ(limited.code, report.at("status") == "partial" ? 4 : 0) << limited.output;
}

TEST(Cli, GenSynthAndExportMps) {
  const fs::path dir = Scratch("synth");
  ASSERT_EQ(RunCli(dir, "--seed 3 gen-synth --kind outliers --n 60 --output s.csv").code, 0);
  std::ifstream csv(dir / "s.csv");
  int lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  EXPECT_EQ(lines, 61);

  WriteJson(dir / "c.json", SmallConfig());
  ASSERT_EQ(RunCli(dir, "export-mps --config c.json --epsilon 0.05 --delta 0.2 --output m.mps").code, 0);
  const mpaudit::MilpModel m = mpaudit::ReadMps((dir / "m.mps").string());
  EXPECT_GT(m.NumInteger(), 0);
  EXPECT_TRUE(m.maximize);
}

}  // namespace
