#ifndef MPAUDIT_AUDIT_H_
#define MPAUDIT_AUDIT_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpaudit/dataset.h"
#include "mpaudit/discrepancy.h"
#include "mpaudit/linear_model.h"
#include "mpaudit/multiplicity.h"
#include "mpaudit/trainer.h"

namespace mpaudit {

inline constexpr char kToolVersion[] = "0.1.0";
inline constexpr int kReportSchemaVersion = 1;

struct CsvSource {
  std::string path;
  std::string label = "label";
  std::optional<std::string> group;
  std::string positive_label = "1";
};

struct EpsilonDelta {
  double epsilon = 0.0;
  double delta = 0.0;
};

struct AuditConfig {
  // Exactly one of csv and synthetic is set. Synthetic data take their seed
  // from `seed`.
  std::optional<CsvSource> csv;
  std::optional<SyntheticSpec> synthetic;
  // Read with the training sample's label and group columns.
  std::optional<std::string> eval_csv;
  // Fitted on the training sample and applied to both samples.
  bool standardize = false;

  std::vector<MetricSpec> metrics = {MetricSpec::LogLoss(),
                                     MetricSpec::AucError(), MetricSpec::Ece()};
  std::vector<double> epsilon_grid = {0.001, 0.005, 0.01, 0.02, 0.05};
  std::vector<double> delta_grid = {0.05, 0.1, 0.2, 0.3};
  ThresholdSpec thresholds;
  TrainConfig train;

  MilpConfig milp;
  bool run_milp = true;
  // Every grid cell instead of `milp_cells`.
  bool milp_all_cells = false;
  std::vector<EpsilonDelta> milp_cells = {{0.01, 0.2}};

  // Cell used for the plots and the uniqueness table; snapped to the nearest
  // grid values.
  EpsilonDelta reference = {0.01, 0.2};
  int ece_bins = 10;
  bool auc_tie_credit = false;
  int threads = 1;
  std::uint64_t seed = 0;
  std::string out_dir = "mpaudit_out";
  // Wall-clock fields break byte-for-byte reproducibility; off by default.
  bool include_timing = false;

  // Throws InvalidConfig.
  void Validate() const;
  // MILP cells after applying milp_all_cells; empty when run_milp is off.
  std::vector<EpsilonDelta> EffectiveMilpCells() const;
};

// Relative paths in the JSON resolve against `base_dir`. Unknown keys are
// rejected. Throws InvalidConfig.
AuditConfig AuditConfigFromJson(const nlohmann::json& j,
                                const std::string& base_dir = ".");
nlohmann::json ToJson(const AuditConfig& config);

// 64-bit FNV-1a of the canonical config JSON, as 16 hex digits.
std::string ConfigHash(const AuditConfig& config);

struct AuditData {
  Dataset train;
  std::optional<Dataset> eval;
};

// Loads or generates the samples named by `config`.
AuditData LoadAuditData(const AuditConfig& config);

struct ExactCell {
  double epsilon = 0.0;
  double delta = 0.0;
  BnbStatus status = BnbStatus::kOptimal;
  int objective = 0;
  double discrepancy = 0.0;
  // Best count among level-set pool members on the training sample.
  int lower_bound_count = 0;
  double lower_bound = 0.0;
  double best_bound = 0.0;
  double gap = 0.0;
  long node_count = 0;
  int cut_count = 0;
  int harvested = 0;
  double coef_bound = 0.0;
  double wall_secs = 0.0;
};

struct UniquenessRow {
  int duplicate_count = 0;
  int examples = 0;
  int ambiguous = 0;
};

struct AuditReport {
  AuditConfig config;
  int n_train = 0;
  int n_eval = 0;
  std::vector<std::string> feature_names;
  LinearModel baseline;
  // Per metric in config order, on the training (and evaluation) sample.
  std::vector<double> train_metrics;
  std::vector<double> eval_metrics;
  int pool_size = 0;
  std::vector<TrainingFailure> failures;
  std::vector<MultiplicityReport> sweeps;
  // Sweeps over the pool enlarged with MILP intermediate models; empty when
  // no model was harvested.
  std::vector<MultiplicityReport> sweeps_with_oa;
  std::vector<ExactCell> exact;
  EpsilonDelta reference;
  ViableRange reference_ranges;
  Vector reference_deviation;
  Vector baseline_risk;
  std::vector<UniquenessRow> uniqueness;
  double wall_secs = 0.0;

  // Any MILP cell stopped by a limit, or any candidate failed to train.
  bool partial() const;
};

// Full pipeline. Candidate failures and MILP limits are recorded, not thrown.
AuditReport RunAudit(const AuditConfig& config);

nlohmann::json ToJson(const AuditReport& report);

// Writes report.json, the CSV tables and the SVG plots into
// config.out_dir. Returns the written file names, sorted.
std::vector<std::string> WriteAuditOutputs(const AuditReport& report);

}  // namespace mpaudit

#endif  // MPAUDIT_AUDIT_H_
