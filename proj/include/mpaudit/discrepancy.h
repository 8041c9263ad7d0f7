#ifndef MPAUDIT_DISCREPANCY_H_
#define MPAUDIT_DISCREPANCY_H_

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mpaudit/dataset.h"
#include "mpaudit/linear_model.h"
#include "mpaudit/milp.h"
#include "mpaudit/multiplicity.h"

namespace mpaudit {

struct CoefficientBounds {
  Vector lower;
  Vector upper;

  static CoefficientBounds Symmetric(int dim, double bound) {
    return {Vector::Constant(dim, -bound), Vector::Constant(dim, bound)};
  }
};

// max(10, 2 * ||w0||_inf).
double DefaultCoefficientBound(const LinearModel& baseline);

// Linear under-estimator of the loss written as gradient . w <= rhs; every w
// with L(w) <= L0 + epsilon satisfies it.
struct LossCut {
  Vector gradient;
  double rhs = 0.0;
};

struct DiscrepancyProblem {
  Dataset data;
  LinearModel baseline;
  double baseline_loss = 0.0;
  double epsilon = 0.0;
  double delta = 0.0;
  Vector coef_lower;
  Vector coef_upper;
  Vector baseline_risk;
  // Score thresholds logit(g0 - delta) and logit(g0 + delta); +/-inf when the
  // matching indicator is dropped.
  Vector v_plus;
  Vector v_minus;
  Vector big_m_plus;
  Vector big_m_minus;
  std::vector<bool> active_plus;
  std::vector<bool> active_minus;
  std::vector<LossCut> cuts;

  double loss_limit() const { return baseline_loss + epsilon; }
  int n() const { return data.n(); }
  int dim() const { return data.dim(); }
};

// Seeds the cut list with the tangent at the baseline.
DiscrepancyProblem BuildProblem(const Dataset& data, const LinearModel& baseline,
                                double epsilon, double delta,
                                const CoefficientBounds& bounds);

// Tangent cut of the loss at w_hat against the problem's loss limit.
LossCut MakeLossCut(const DiscrepancyProblem& problem, const Vector& w_hat);

// Examples whose prediction under w moves by at least delta from the
// baseline (same slack as the candidate-pool deviation test).
int DeviationCount(const DiscrepancyProblem& problem, const Vector& w);

// Column and row positions of the MILP variables; -1 marks absent entries.
struct MilpLayout {
  std::vector<int> w_cols;
  std::vector<int> d_col;
  std::vector<int> plus_col;
  std::vector<int> minus_col;
  std::vector<int> cut_rows;
};

// Maximize sum d_i subject to d_i = z+_i + z-_i, the Big-M rows and every
// accumulated loss cut.
MilpModel BuildMilpModel(const DiscrepancyProblem& problem,
                         MilpLayout* layout = nullptr);

enum class CutMode { kInteger, kLp };

struct MilpConfig {
  double mip_gap = 0.0;
  double time_limit_secs = 600.0;
  // Nodes to process; 0 means unlimited.
  long node_limit = 0;
  // Coefficient box half-width; 0 selects DefaultCoefficientBound.
  double coef_bound = 0.0;
  CutMode cut_mode = CutMode::kInteger;

  void Validate() const;
};

nlohmann::json ToJson(const MilpConfig& config);
MilpConfig MilpConfigFromJson(const nlohmann::json& j);

enum class BnbStatus { kOptimal, kTimeLimit, kNodeLimit, kInfeasibleLevelSet };

std::string BnbStatusName(BnbStatus status);

struct BnbResult {
  std::optional<LinearModel> incumbent;
  int objective = 0;
  double best_bound = 0.0;
  double gap = 0.0;
  long node_count = 0;
  int cut_count = 0;
  BnbStatus status = BnbStatus::kOptimal;
  std::vector<LinearModel> intermediate_models;
  // Cuts in the final model, the baseline tangent included.
  std::vector<LossCut> cuts;
  long lp_iterations = 0;
  // (global bound, incumbent objective) after every processed node.
  std::vector<std::pair<double, int>> trace;
};

// Branch and bound with outer approximation of the loss constraint.
// `warm_starts` models that lie in the box and in the level set seed the
// incumbent.
BnbResult SolveDiscrepancy(const DiscrepancyProblem& problem,
                           const MilpConfig& config,
                           const std::vector<LinearModel>& warm_starts = {});

// Adds the intermediate models to the pool as outer-approximation members.
CandidatePool HarvestCandidates(const BnbResult& result, CandidatePool pool);

}  // namespace mpaudit

#endif  // MPAUDIT_DISCREPANCY_H_
