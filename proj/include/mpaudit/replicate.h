#ifndef MPAUDIT_REPLICATE_H_
#define MPAUDIT_REPLICATE_H_

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpaudit/dataset.h"
#include "mpaudit/multiplicity.h"

namespace mpaudit {

enum class Study { kSeparability, kOutliers, kRatio };

std::string StudyName(Study study);
Study ParseStudy(const std::string& name);

// One arm of a paired comparison.
struct StudyCondition {
  std::string name;
  SyntheticSpec spec;  // seed is overwritten per run
};

// The two arms compared by `study`, reference arm first.
std::vector<StudyCondition> StudyConditions(Study study);

struct ReplicateOptions {
  double epsilon = 0.05;
  double delta = 0.2;
  PoolOptions pool;
  // Workers over seeds; results do not depend on this value.
  int threads = 1;
};

struct ConditionRun {
  std::uint64_t seed = 0;
  double ambiguity = 0.0;
  // Per group label, in first-appearance order; empty without groups.
  std::vector<std::pair<std::string, double>> group_ambiguity;
  int training_failures = 0;
};

struct ConditionSummary {
  std::string name;
  std::vector<ConditionRun> runs;
  double mean_ambiguity = 0.0;
  std::vector<std::pair<std::string, double>> mean_group_ambiguity;
};

struct Verdict {
  std::string name;
  std::string description;
  bool holds = false;
};

struct StudyReport {
  Study study = Study::kSeparability;
  std::vector<ConditionSummary> conditions;
  std::vector<Verdict> verdicts;
};

// Loss level set at options.epsilon, deviations at options.delta.
StudyReport RunStudy(Study study, const std::vector<std::uint64_t>& seeds,
                     const ReplicateOptions& options);

nlohmann::json ToJson(const StudyReport& report);

}  // namespace mpaudit

#endif  // MPAUDIT_REPLICATE_H_
