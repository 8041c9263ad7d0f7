#ifndef MPAUDIT_MULTIPLICITY_H_
#define MPAUDIT_MULTIPLICITY_H_

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpaudit/dataset.h"
#include "mpaudit/linear_model.h"
#include "mpaudit/trainer.h"

namespace mpaudit {

struct Provenance {
  enum class Kind { kBaseline, kCandidate, kOuterApprox };
  Kind kind = Kind::kBaseline;
  // Candidate models: the constrained example and the requested threshold.
  int example_index = -1;
  double threshold = 0.0;
  ConstraintDirection direction = ConstraintDirection::kAtMost;
  // Outer-approximation models: order of discovery within one solve.
  int oa_iteration = -1;

  static Provenance Baseline() { return {}; }
  static Provenance Candidate(int example, double p, ConstraintDirection dir) {
    return {Kind::kCandidate, example, p, dir, -1};
  }
  static Provenance OuterApprox(int iteration) {
    return {Kind::kOuterApprox, -1, 0.0, ConstraintDirection::kAtMost,
            iteration};
  }
};

struct TrainingFailure {
  int example_index = -1;
  double threshold = 0.0;
  std::string message;
};

enum class ThresholdMode { kGrid, kAligned };

struct ThresholdSpec {
  ThresholdMode mode = ThresholdMode::kGrid;
  // Used in grid mode; need not be sorted.
  std::vector<double> grid = DefaultGrid();
  // Used in aligned mode: one candidate at g0(x_i) - delta and one at + delta.
  double delta = 0.2;

  static std::vector<double> DefaultGrid() {
    return {0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.99};
  }
};

struct PoolOptions {
  ThresholdSpec thresholds;
  TrainConfig train;
  // Worker threads over examples. Results do not depend on this value.
  int threads = 1;
  // Metric settings for the cached AUC and ECE values.
  int ece_bins = 10;
  bool auc_tie_credit = false;
};

// Models near the baseline, with metrics on the training data and predictions
// on the evaluation sample (the training data unless a separate sample is
// given). Member 0 is always the baseline.
class CandidatePool {
 public:
  struct Member {
    LinearModel model;
    Provenance provenance;
    // Indexed by MetricKind: log loss, AUC error, ECE on the training data.
    std::array<double, 3> metrics{};
    Vector predictions;
  };

  CandidatePool(Dataset data, std::optional<Dataset> eval,
                const LinearModel& baseline, int ece_bins = 10,
                bool auc_tie_credit = false);

  const Dataset& data() const { return data_; }
  const Dataset& eval_data() const { return eval_ ? *eval_ : data_; }
  bool has_separate_eval() const { return eval_.has_value(); }
  const std::vector<Member>& members() const { return members_; }
  const Member& baseline() const { return members_.front(); }
  size_t size() const { return members_.size(); }
  const std::vector<TrainingFailure>& failures() const { return failures_; }
  int ece_bins() const { return ece_bins_; }
  bool auc_tie_credit() const { return auc_tie_credit_; }

  // The pool's configured spec for `kind`.
  MetricSpec Spec(MetricKind kind) const;
  // Cached value when `metric` matches the pool's settings, recomputed
  // otherwise.
  double MetricValue(size_t index, const MetricSpec& metric) const;

  void Add(LinearModel model, const Provenance& provenance);
  void RecordFailure(TrainingFailure failure);

 private:
  Dataset data_;
  std::optional<Dataset> eval_;
  int ece_bins_;
  bool auc_tie_credit_;
  std::vector<Member> members_;
  std::vector<TrainingFailure> failures_;
};

// Trains the candidate models for every training example. Training failures
// are recorded in the pool and do not abort the build.
CandidatePool BuildPool(const Dataset& data, const LinearModel& baseline,
                        const PoolOptions& options,
                        const std::optional<Dataset>& eval = std::nullopt);

// Targets for example i given its baseline risk, in training order.
std::vector<ScoreConstraint> CandidateConstraints(int example_index,
                                                  double baseline_risk,
                                                  const ThresholdSpec& spec);

struct LevelSetSpec {
  MetricSpec metric;
  double epsilon = 0.01;
  double baseline_value = 0.0;
};

// Spec with baseline_value filled from the pool's baseline.
LevelSetSpec MakeLevelSet(const CandidatePool& pool, const MetricSpec& metric,
                          double epsilon);

// Pool indices with M(g) <= M(g0) + epsilon, ascending. Always holds 0.
std::vector<int> FilterLevelSet(const CandidatePool& pool,
                                const LevelSetSpec& spec);

enum class EstimateKind { kExactForLoss, kConservative };

struct ViableRange {
  Vector lo;
  Vector hi;
  EstimateKind estimate_kind = EstimateKind::kConservative;
};

ViableRange ViableRanges(const CandidatePool& pool, const LevelSetSpec& spec);

// Deviations count when they reach delta minus this slack.
inline constexpr double kDeviationSlack = 1e-9;

struct AmbiguityResult {
  double ambiguity = 0.0;
  // max over the level set of |g(x_i) - g0(x_i)| on the evaluation sample.
  Vector max_deviation;
  std::vector<bool> ambiguous;
};

AmbiguityResult Ambiguity(const CandidatePool& pool, const LevelSetSpec& spec,
                          double delta);

struct DiscrepancyBound {
  double value = 0.0;
  int count = 0;
  int model_index = 0;
};

DiscrepancyBound DiscrepancyLowerBound(const CandidatePool& pool,
                                       const LevelSetSpec& spec, double delta);

struct MultiplicityCell {
  double epsilon = 0.0;
  double delta = 0.0;
  double ambiguity = 0.0;
  double discrepancy_lower_bound = 0.0;
  int discrepancy_model = 0;
  int level_set_size = 0;
};

struct GroupCell {
  double epsilon = 0.0;
  double delta = 0.0;
  std::string group;
  int size = 0;
  double ambiguity = 0.0;
  double discrepancy_lower_bound = 0.0;
};

struct MultiplicityReport {
  MetricSpec metric;
  std::vector<double> epsilon_grid;
  std::vector<double> delta_grid;
  // Row-major over (epsilon, delta).
  std::vector<MultiplicityCell> cells;
  // One vector per epsilon.
  std::vector<Vector> max_deviation;
  std::vector<GroupCell> group_breakdown;
  EstimateKind estimate_kind = EstimateKind::kConservative;

  const MultiplicityCell& Cell(size_t eps_index, size_t delta_index) const {
    return cells[eps_index * delta_grid.size() + delta_index];
  }
};

// Grids must be strictly increasing; throws InvalidConfig otherwise.
MultiplicityReport Sweep(const CandidatePool& pool, const MetricSpec& metric,
                         const std::vector<double>& epsilon_grid,
                         const std::vector<double>& delta_grid);

// Archive layout: <dir>/pool.json and <dir>/coefficients.bin.
void SavePool(const CandidatePool& pool, const std::string& dir);
// The datasets must be the ones the pool was built with; cached metrics are
// recomputed and checked against the archive.
CandidatePool LoadPool(const std::string& dir, const Dataset& data,
                       const std::optional<Dataset>& eval = std::nullopt);

std::string EstimateKindName(EstimateKind kind);
std::string ProvenanceKindName(Provenance::Kind kind);

}  // namespace mpaudit

#endif  // MPAUDIT_MULTIPLICITY_H_
