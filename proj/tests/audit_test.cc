#include "mpaudit/audit.h"

#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "mpaudit/error.h"

namespace mpaudit {
namespace {

namespace fs = std::filesystem;

fs::path Scratch(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / "mpaudit_audit_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void ExpectConfigError(const nlohmann::json& j) {
  try {
    AuditConfigFromJson(j);
    ADD_FAILURE() << "accepted " << j.dump();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidConfig) << j.dump();
  }
}

nlohmann::json SmallSynthetic() {
  return {{"data", {{"synthetic", {{"kind", "majority_minority"},
                                   {"sigma", 3},
                                   {"group_ratio", 4},
                                   {"n_total", 60}}}}},
          {"seed", 1},
          {"epsilon_grid", {0.01, 0.05}},
          {"delta_grid", {0.1, 0.2, 0.99}},
          {"run_milp", false}};
}

TEST(AuditConfig, Defaults) {
  const AuditConfig c = AuditConfigFromJson({{"data", {{"csv", {{"path", "x.csv"}}}}}});
  EXPECT_EQ(c.metrics.size(), 3u);
  EXPECT_EQ(c.epsilon_grid, (std::vector<double>{0.001, 0.005, 0.01, 0.02, 0.05}));
  EXPECT_EQ(c.delta_grid, (std::vector<double>{0.05, 0.1, 0.2, 0.3}));
  EXPECT_EQ(c.thresholds.grid, ThresholdSpec::DefaultGrid());
  EXPECT_EQ(c.csv->label, "label");
  EXPECT_EQ(c.csv->positive_label, "1");
  EXPECT_TRUE(c.run_milp);
  ASSERT_EQ(c.EffectiveMilpCells().size(), 1u);
  EXPECT_EQ(c.EffectiveMilpCells()[0].epsilon, 0.01);
  EXPECT_EQ(c.ece_bins, 10);
  EXPECT_FALSE(c.include_timing);
}

TEST(AuditConfig, RejectsUnknownKeysAndBadValues) {
  const nlohmann::json csv = {{"csv", {{"path", "x.csv"}}}};
  ExpectConfigError({{"data", csv}, {"epsilons", {0.1}}});
  ExpectConfigError({{"data", {{"csv", {{"path", "x.csv"}, {"sep", ";"}}}}}});
  ExpectConfigError({{"data", {{"synthetic", {{"kind", "outliers"}, {"seed", 3}}}}}});
  ExpectConfigError({{"data", csv}, {"epsilon_grid", {0.02, 0.01}}});
  ExpectConfigError({{"data", csv}, {"epsilon_grid", {0.0, 0.01}}});
  ExpectConfigError({{"data", csv}, {"delta_grid", {0.5, 1.0}}});
  ExpectConfigError({{"data", csv}, {"delta_grid", nlohmann::json::array()}});
  ExpectConfigError({{"data", csv}, {"metrics", {"ece", "ece"}}});
  ExpectConfigError({{"data", csv}, {"thresholds", {{"mode", "random"}}}});
  ExpectConfigError({{"data", csv}, {"milp_cells", {{0.01}}}});
  ExpectConfigError({{"data", csv}, {"reference", {0.01, 1.5}}});
  ExpectConfigError({{"data", csv}, {"threads", 0}});
  ExpectConfigError({{"data", csv}, {"seed", "zero"}});
  ExpectConfigError({{"epsilon_grid", {0.01}}});  // No data source.
  ExpectConfigError(nlohmann::json::array());
}

TEST(AuditConfig, RelativePathsResolveAgainstTheBaseDirectory) {
  const AuditConfig c = AuditConfigFromJson(
      {{"data", {{"csv", {{"path", "../data/a.csv"}}}}},
       {"eval_csv", "b.csv"},
       {"out_dir", "/abs/out"}},
      "/work/configs");
  EXPECT_EQ(c.csv->path, "/work/data/a.csv");
  EXPECT_EQ(*c.eval_csv, "/work/configs/b.csv");
  EXPECT_EQ(c.out_dir, "/abs/out");
}

TEST(AuditConfig, JsonRoundTripAndHash) {
  nlohmann::json j = SmallSynthetic();
  j["milp_cells"] = {{0.05, 0.2}};
  j["thresholds"] = {{"mode", "aligned"}, {"delta", 0.1}};
  const AuditConfig c = AuditConfigFromJson(j);
  const AuditConfig back = AuditConfigFromJson(ToJson(c));
  EXPECT_EQ(ToJson(back), ToJson(c));
  EXPECT_EQ(ConfigHash(back), ConfigHash(c));
  EXPECT_EQ(ConfigHash(c).size(), 16u);

  // Output location and worker count leave every result unchanged.
  AuditConfig moved = c;
  moved.out_dir = "elsewhere";
  moved.threads = 4;
  EXPECT_EQ(ConfigHash(moved), ConfigHash(c));
  AuditConfig reseeded = c;
  reseeded.seed = 2;
  EXPECT_NE(ConfigHash(reseeded), ConfigHash(c));
}

TEST(RunAudit, GroupSizesFollowTheRatio) {
  nlohmann::json j = SmallSynthetic();
  j["data"]["synthetic"] = {{"kind", "majority_minority"}, {"sigma", 3}, {"group_ratio", 10}};
  j["metrics"] = {"log_loss"};
  const AuditReport r = RunAudit(AuditConfigFromJson(j));
  const nlohmann::json groups = ToJson(r).at("data").at("groups");
  ASSERT_EQ(groups.size(), 2u);
  std::map<std::string, int> sizes;
  for (const auto& g : groups) sizes[g.at("group")] = g.at("size");
  EXPECT_EQ(sizes["majority"], 150);
  EXPECT_EQ(sizes["minority"], 15);
}

TEST(RunAudit, NearOneDeltaRowIsZeroAndReportIsDeterministic) {
  const AuditConfig c = AuditConfigFromJson(SmallSynthetic());
  const AuditReport a = RunAudit(c);
  for (const MultiplicityReport& sweep : a.sweeps) {
    for (size_t e = 0; e < sweep.epsilon_grid.size(); ++e) {
      EXPECT_EQ(sweep.Cell(e, 2).ambiguity, 0.0) << MetricName(sweep.metric);
    }
  }
  EXPECT_TRUE(a.exact.empty());
  EXPECT_FALSE(a.partial());

  AuditConfig threaded = c;
  threaded.threads = 3;
  const AuditReport b = RunAudit(threaded);
  EXPECT_EQ(ToJson(a).dump(), ToJson(b).dump());
  EXPECT_FALSE(ToJson(a).contains("timing"));
}

TEST(RunAudit, ExactCountIsAtLeastThePoolBoundOnAOneFeatureToy) {
  const fs::path dir = Scratch("toy");
  {
    std::ofstream csv(dir / "toy.csv");
    csv << "x,label\n";
    std::mt19937_64 rng(6);
    std::normal_distribution<double> normal;
    for (int i = 0; i < 14; ++i) {
      const double x = normal(rng);
      csv << x << "," << (x + 0.8 * normal(rng) > 0 ? 1 : 0) << "\n";
    }
  }
  const nlohmann::json j = {
      {"data", {{"csv", {{"path", "toy.csv"}}}}},
      {"epsilon_grid", {0.01, 0.05}},
      {"delta_grid", {0.1, 0.2}},
      {"milp_all_cells", true},
      {"milp", {{"time_limit_secs", 60}}},
      {"out_dir", "out"}};
  const AuditConfig c = AuditConfigFromJson(j, dir.string());
  const AuditReport r = RunAudit(c);
  ASSERT_EQ(r.exact.size(), 4u);
  for (const ExactCell& cell : r.exact) {
    EXPECT_EQ(cell.status, BnbStatus::kOptimal) << cell.epsilon << " " << cell.delta;
    EXPECT_GE(cell.objective, cell.lower_bound_count);
    EXPECT_GE(cell.discrepancy, cell.lower_bound - 1e-12);
    EXPECT_EQ(cell.gap, 0.0);
  }
  EXPECT_FALSE(r.partial());

  const std::vector<std::string> files = WriteAuditOutputs(r);
  std::vector<std::string> listed;
  for (const auto& entry : fs::directory_iterator(dir / "out")) {
    listed.push_back(entry.path().filename().string());
  }
  std::sort(listed.begin(), listed.end());
  EXPECT_EQ(files, listed);
  EXPECT_TRUE(std::is_sorted(files.begin(), files.end()));
}

TEST(LoadAuditData, EvalFeaturesMustMatch) {
  const fs::path dir = Scratch("eval");
  std::ofstream(dir / "train.csv") << "a,b,label\n1,2,1\n2,1,0\n0,0,1\n";
  std::ofstream(dir / "eval.csv") << "a,c,label\n1,2,1\n2,1,0\n";
  const AuditConfig c = AuditConfigFromJson(
      {{"data", {{"csv", {{"path", "train.csv"}}}}}, {"eval_csv", "eval.csv"}},
      dir.string());
  EXPECT_THROW(LoadAuditData(c), Error);
}

}  // namespace
}  // namespace mpaudit
