#include "mpaudit/replicate.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <thread>

#include <fmt/format.h>

#include "mpaudit/error.h"
#include "mpaudit/log.h"
#include "mpaudit/trainer.h"

namespace mpaudit {
namespace {

// Target band for the noisier separability arm: 21% +/- 10 points.
constexpr double kBandCentre = 0.21;
constexpr double kBandHalfWidth = 0.10;

SyntheticSpec Spec(SyntheticKind kind) {
  SyntheticSpec s;
  s.kind = kind;
  return s;
}

ConditionRun RunOnce(const SyntheticSpec& spec, const ReplicateOptions& options) {
  const Dataset data = GenerateSynthetic(spec);
  const LinearModel baseline = TrainBaseline(data, options.pool.train).model;
  const CandidatePool pool = BuildPool(data, baseline, options.pool);
  const MultiplicityReport report = Sweep(pool, MetricSpec::LogLoss(),
                                          {options.epsilon}, {options.delta});
  ConditionRun run;
  run.seed = spec.seed;
  run.ambiguity = report.Cell(0, 0).ambiguity;
  for (const GroupCell& g : report.group_breakdown) {
    run.group_ambiguity.emplace_back(g.group, g.ambiguity);
  }
  run.training_failures = static_cast<int>(pool.failures().size());
  return run;
}

double GroupMean(const ConditionSummary& c, const std::string& group) {
  for (const auto& [name, value] : c.mean_group_ambiguity) {
    if (name == group) return value;
  }
  throw Error(ErrorCode::kInvalidSpec,
              fmt::format("condition {} has no group {}", c.name, group));
}

}  // namespace

std::string StudyName(Study study) {
  switch (study) {
    case Study::kSeparability:
      return "separability";
    case Study::kOutliers:
      return "outliers";
    case Study::kRatio:
      return "ratio";
  }
  return "separability";
}

Study ParseStudy(const std::string& name) {
  if (name == "separability") return Study::kSeparability;
  if (name == "outliers") return Study::kOutliers;
  if (name == "ratio") return Study::kRatio;
  throw Error(ErrorCode::kInvalidConfig,
              fmt::format("unknown study '{}' (separability, outliers, ratio)", name));
}

std::vector<StudyCondition> StudyConditions(Study study) {
  switch (study) {
    case Study::kSeparability: {
      SyntheticSpec tight = Spec(SyntheticKind::kSeparability);
      tight.sigma = 4.0;
      SyntheticSpec loose = tight;
      loose.sigma = 10.0;
      return {{"sigma_4", tight}, {"sigma_10", loose}};
    }
    case Study::kOutliers: {
      SyntheticSpec large = Spec(SyntheticKind::kOutliers);
      large.outlier_margin = 36.0;
      SyntheticSpec small = large;
      small.outlier_margin = 4.0;
      return {{"large_margin", large}, {"small_margin", small}};
    }
    case Study::kRatio: {
      SyntheticSpec skewed = Spec(SyntheticKind::kMajorityMinority);
      skewed.sigma = 3.0;
      skewed.group_ratio = 10.0;
      SyntheticSpec even = skewed;
      even.group_ratio = 1.0;
      return {{"ratio_10_1", skewed}, {"ratio_1_1", even}};
    }
  }
  return {};
}

StudyReport RunStudy(Study study, const std::vector<std::uint64_t>& seeds,
                     const ReplicateOptions& options) {
  if (seeds.empty()) throw Error(ErrorCode::kInvalidConfig, "no seeds given");
  StudyReport report;
  report.study = study;
  for (const StudyCondition& condition : StudyConditions(study)) {
    ConditionSummary summary;
    summary.name = condition.name;
    summary.runs.resize(seeds.size());
    std::vector<std::exception_ptr> errors(seeds.size());
    std::atomic<size_t> next{0};
    auto worker = [&] {
      for (size_t k = next++; k < seeds.size(); k = next++) {
        SyntheticSpec spec = condition.spec;
        spec.seed = seeds[k];
        try {
          summary.runs[k] = RunOnce(spec, options);
        } catch (...) {
          errors[k] = std::current_exception();
          continue;
        }
        Log().info("replicate {} {} seed {}: ambiguity {:.4f}", StudyName(study),
                   condition.name, seeds[k], summary.runs[k].ambiguity);
      }
    };
    const int workers = std::clamp(options.threads, 1, static_cast<int>(seeds.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < workers; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    double total = 0.0;
    for (const ConditionRun& r : summary.runs) total += r.ambiguity;
    summary.mean_ambiguity = total / summary.runs.size();
    for (size_t g = 0; g < summary.runs.front().group_ambiguity.size(); ++g) {
      double sum = 0.0;
      for (const ConditionRun& r : summary.runs) sum += r.group_ambiguity[g].second;
      summary.mean_group_ambiguity.emplace_back(
          summary.runs.front().group_ambiguity[g].first, sum / summary.runs.size());
    }
    report.conditions.push_back(std::move(summary));
  }

  const ConditionSummary& a = report.conditions[0];
  const ConditionSummary& b = report.conditions[1];
  switch (study) {
    case Study::kSeparability:
      report.verdicts.push_back(
          {"noise_increases_ambiguity", "mean ambiguity sigma_10 > sigma_4",
           b.mean_ambiguity > a.mean_ambiguity});
      report.verdicts.push_back(
          {"sigma_10_in_band",
           fmt::format("mean ambiguity sigma_10 within {} +/- {}", kBandCentre,
                       kBandHalfWidth),
           std::abs(b.mean_ambiguity - kBandCentre) <= kBandHalfWidth});
      break;
    case Study::kOutliers:
      report.verdicts.push_back(
          {"small_margin_outliers_more_ambiguous",
           "mean outlier ambiguity small_margin >= large_margin",
           GroupMean(b, "outlier") >= GroupMean(a, "outlier")});
      break;
    case Study::kRatio:
      report.verdicts.push_back(
          {"minority_more_ambiguous",
           "at 10:1, mean minority ambiguity > mean majority ambiguity",
           GroupMean(a, "minority") > GroupMean(a, "majority")});
      break;
  }
  return report;
}

nlohmann::json ToJson(const StudyReport& report) {
  nlohmann::json conditions = nlohmann::json::array();
  for (const ConditionSummary& c : report.conditions) {
    nlohmann::json runs = nlohmann::json::array();
    for (const ConditionRun& r : c.runs) {
      nlohmann::json groups = nlohmann::json::object();
      for (const auto& [name, value] : r.group_ambiguity) groups[name] = value;
      runs.push_back({{"seed", r.seed},
                      {"ambiguity", r.ambiguity},
                      {"group_ambiguity", groups},
                      {"training_failures", r.training_failures}});
    }
    nlohmann::json means = nlohmann::json::object();
    for (const auto& [name, value] : c.mean_group_ambiguity) means[name] = value;
    conditions.push_back({{"name", c.name},
                          {"mean_ambiguity", c.mean_ambiguity},
                          {"mean_group_ambiguity", means},
                          {"runs", runs}});
  }
  nlohmann::json verdicts = nlohmann::json::array();
  for (const Verdict& v : report.verdicts) {
    verdicts.push_back(
        {{"name", v.name}, {"description", v.description}, {"holds", v.holds}});
  }
  return {{"study", StudyName(report.study)},
          {"conditions", conditions},
          {"verdicts", verdicts}};
}

}  // namespace mpaudit
