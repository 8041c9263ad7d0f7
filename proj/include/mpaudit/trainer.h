#ifndef MPAUDIT_TRAINER_H_
#define MPAUDIT_TRAINER_H_

#include <optional>

#include "json.hpp"
#include "mpaudit/dataset.h"
#include "mpaudit/linear_model.h"

namespace mpaudit {

// Settings for the regularized ERM solves. The objective is
// L(w) + l2_penalty / 2 * ||w||^2.
struct TrainConfig {
  double l2_penalty = 1e-6;
  int max_iters = 50000;
  double grad_tol = 1e-8;
  double constraint_tol = 1e-9;

  void Validate() const;
};

nlohmann::json ToJson(const TrainConfig& config);
TrainConfig TrainConfigFromJson(const nlohmann::json& j);

enum class ConstraintDirection { kAtMost, kAtLeast };

// g(x_i) <= p (at most) or g(x_i) >= p (at least), held in score space as
// <w, x_i> <= logit(p) or >= logit(p).
class ScoreConstraint {
 public:
  static constexpr double kMinProbability = 1e-4;
  static constexpr double kMaxProbability = 1.0 - 1e-4;

  // `p` is clamped to [kMinProbability, kMaxProbability].
  ScoreConstraint(int example_index, ConstraintDirection direction, double p);

  int example_index() const { return example_index_; }
  ConstraintDirection direction() const { return direction_; }
  double threshold_probability() const { return threshold_; }
  double score_bound() const { return score_bound_; }

 private:
  int example_index_;
  ConstraintDirection direction_;
  double threshold_;
  double score_bound_;
};

struct TrainResult {
  LinearModel model;
  // Regularized objective at `model`.
  double objective = 0.0;
  int iterations = 0;
  // Infinity norm of the (projected) regularized gradient at `model`.
  double residual = 0.0;
  // True when the returned point lies on the constraint hyperplane with a
  // nonnegative multiplier.
  bool constraint_active = false;
};

// Unconstrained regularized ERM from w = 0. Throws NoConvergence.
TrainResult TrainBaseline(const Dataset& data, const TrainConfig& config);

// Regularized ERM subject to one score constraint. Throws NoConvergence.
TrainResult TrainCandidate(const Dataset& data,
                           const ScoreConstraint& constraint,
                           const std::optional<LinearModel>& warm_start,
                           const TrainConfig& config);

// Euclidean projection of `w` onto {v : <v,x> <= bound} (at most) or
// {v : <v,x> >= bound} (at least). Throws ZeroFeatureVector for x = 0.
Vector ProjectHalfspace(const Vector& w, const Vector& x, double bound,
                        ConstraintDirection direction);
Vector ProjectHalfspace(const Vector& w, const ScoreConstraint& constraint,
                        const Vector& x);

// Regularized objective and gradient, exposed for verification.
double RegularizedObjective(const LinearModel& model, const Dataset& data,
                            double l2_penalty);
Vector RegularizedGradient(const LinearModel& model, const Dataset& data,
                           double l2_penalty);

// First-order stationarity residual of `model` for the constrained problem:
// the infinity norm of the regularized gradient projected onto the cone of
// feasible directions. Pass no constraint for the unconstrained problem.
double StationarityResidual(const LinearModel& model, const Dataset& data,
                            const std::optional<ScoreConstraint>& constraint,
                            double l2_penalty);

}  // namespace mpaudit

#endif  // MPAUDIT_TRAINER_H_
