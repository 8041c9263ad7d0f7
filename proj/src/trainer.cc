#include "mpaudit/trainer.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include <fmt/format.h>

#include "mpaudit/error.h"
#include "mpaudit/log.h"

namespace mpaudit {
namespace {

constexpr int kMemory = 10;
constexpr int kMaxLineSearchTrials = 80;
constexpr double kArmijo = 1e-4;
constexpr double kCurvature = 0.9;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct Eval {
  double f = 0.0;
  Vector g;
};

// Objective and gradient in one pass over the data.
Eval Evaluate(const Dataset& data, const Vector& w, double l2_penalty) {
  const Vector scores = data.x() * w;
  Vector weights(data.n());
  CompensatedSum loss;
  for (int i = 0; i < data.n(); ++i) {
    const double margin = data.y()(i) * scores(i);
    loss.Add(Softplus(-margin));
    weights(i) = -data.y()(i) * Sigmoid(-margin);
  }
  const double n = static_cast<double>(data.n());
  Eval e;
  e.f = loss.value() / n + 0.5 * l2_penalty * w.squaredNorm();
  e.g = data.x().transpose() * weights / n + l2_penalty * w;
  return e;
}

// The feasible set {w : sign * (<a, w> - bound) <= 0}.
struct Halfspace {
  Vector a;
  double bound = 0.0;
  double sign = 1.0;
  double a_sq = 1.0;

  double Violation(const Vector& w) const { return sign * (a.dot(w) - bound); }
  Vector Tangent(const Vector& v) const { return v - a.dot(v) / a_sq * a; }
  void SnapToPlane(Vector& w) const { w += (bound - a.dot(w)) / a_sq * a; }
  // KKT multiplier of the constraint given the objective gradient.
  double Multiplier(const Vector& g) const { return -sign * a.dot(g) / a_sq; }
};

class LbfgsMemory {
 public:
  void Clear() { pairs_.clear(); }
  bool empty() const { return pairs_.empty(); }

  void Push(const Vector& s, const Vector& y) {
    const double sy = s.dot(y);
    if (!(sy > 1e-16 * s.norm() * y.norm()) || !(sy > 0.0)) return;
    if (static_cast<int>(pairs_.size()) == kMemory) pairs_.pop_front();
    pairs_.push_back({s, y, 1.0 / sy});
  }

  // Two-loop recursion: returns -H * grad.
  Vector Direction(const Vector& grad) const {
    Vector q = grad;
    std::vector<double> alpha(pairs_.size());
    for (int k = static_cast<int>(pairs_.size()) - 1; k >= 0; --k) {
      alpha[k] = pairs_[k].rho * pairs_[k].s.dot(q);
      q -= alpha[k] * pairs_[k].y;
    }
    if (!pairs_.empty()) {
      const auto& last = pairs_.back();
      q *= last.s.dot(last.y) / last.y.squaredNorm();
    }
    for (size_t k = 0; k < pairs_.size(); ++k) {
      const double beta = pairs_[k].rho * pairs_[k].y.dot(q);
      q += (alpha[k] - beta) * pairs_[k].s;
    }
    return -q;
  }

 private:
  struct Pair {
    Vector s;
    Vector y;
    double rho;
  };
  std::deque<Pair> pairs_;
};

struct Step {
  bool ok = false;
  bool hit_bound = false;
  Vector w;
  Eval eval;
};

// Line search along `d` for a convex objective, alpha in (0, alpha_max].
// Accepts a point whose directional derivative satisfies the strong curvature
// condition; when the derivative is still steeply negative at alpha_max the
// step stops on the boundary.
Step LineSearch(const Dataset& data, double l2_penalty, const Vector& w,
                const Eval& start, const Vector& d, double alpha_init,
                double alpha_max) {
  const double dphi0 = start.g.dot(d);
  const double slope_cap = kCurvature * std::abs(dphi0);
  double lo = 0.0;
  double dlo = dphi0;
  Step lo_step;
  double hi = kInf;
  double dhi = 0.0;
  double alpha = std::min(alpha_init, alpha_max);

  for (int trial = 0; trial < kMaxLineSearchTrials; ++trial) {
    Step cur;
    cur.w = w + alpha * d;
    cur.eval = Evaluate(data, cur.w, l2_penalty);
    const double dphi = cur.eval.g.dot(d);
    const bool armijo = cur.eval.f <= start.f + kArmijo * alpha * dphi0;

    if (dphi < -slope_cap) {
      lo = alpha;
      dlo = dphi;
      lo_step = cur;
      lo_step.ok = true;
      if (alpha >= alpha_max) {
        lo_step.hit_bound = true;
        return lo_step;
      }
    } else if (dphi <= 0.0 || (dphi <= slope_cap && armijo)) {
      cur.ok = true;
      cur.hit_bound = alpha >= alpha_max;
      return cur;
    } else {
      hi = alpha;
      dhi = dphi;
    }

    if (hi == kInf) {
      alpha = std::min(2.0 * alpha, alpha_max);
    } else {
      const double width = hi - lo;
      if (width <= 1e-16 * hi) break;
      // Secant on the derivative, kept away from the bracket ends.
      double next = lo + width * (-dlo) / (dhi - dlo);
      next = std::clamp(next, lo + 0.1 * width, hi - 0.1 * width);
      alpha = next;
    }
  }
  return lo_step;
}

double InfNorm(const Vector& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

TrainResult Minimize(const Dataset& data, const std::optional<Halfspace>& hs,
                     Vector w, const TrainConfig& config) {
  const double tol = config.grad_tol;
  const double plane_tol = std::max(config.constraint_tol, 1e-9);
  bool active = false;
  if (hs) {
    if (hs->Violation(w) > 0.0) {
      hs->SnapToPlane(w);
      active = true;
    }
  }

  LbfgsMemory memory;
  Eval cur = Evaluate(data, w, config.l2_penalty);
  int iter = 0;
  int releases = 0;
  double residual = InfNorm(cur.g);

  while (true) {
    const Vector grad = active ? hs->Tangent(cur.g) : cur.g;
    residual = InfNorm(grad);
    if (residual <= tol) {
      if (!active) break;
      // Stationary on the plane: keep the constraint only while its
      // multiplier is nonnegative.
      if (hs->Multiplier(cur.g) >= 0.0 || InfNorm(cur.g) <= tol) break;
      active = false;
      memory.Clear();
      ++releases;
      continue;
    }
    if (iter >= config.max_iters) {
      throw Error(ErrorCode::kNoConvergence,
                  fmt::format("iteration cap {} reached with gradient norm {:.3e}",
                              config.max_iters, residual));
    }

    Vector d = memory.Direction(grad);
    if (active) d = hs->Tangent(d);
    if (!(d.dot(grad) < 0.0)) {
      memory.Clear();
      d = -grad;
    }

    double alpha_max = kInf;
    if (hs && !active) {
      const double rate = hs->sign * hs->a.dot(d);
      if (rate > 0.0) alpha_max = std::max(0.0, -hs->Violation(w)) / rate;
      if (alpha_max <= 0.0) {
        // Sitting on the boundary and heading out of it.
        hs->SnapToPlane(w);
        cur = Evaluate(data, w, config.l2_penalty);
        active = true;
        memory.Clear();
        continue;
      }
    }

    const double alpha_init =
        memory.empty() ? std::min(1.0, 1.0 / InfNorm(d)) : 1.0;
    Step step = LineSearch(data, config.l2_penalty, w, cur, d, alpha_init,
                           alpha_max);
    if (!step.ok) {
      if (!memory.empty()) {
        memory.Clear();
        continue;
      }
      break;  // No progress possible along steepest descent.
    }

    Vector w_next = std::move(step.w);
    bool reevaluate = false;
    if (hs && (active || step.hit_bound)) {
      hs->SnapToPlane(w_next);
      reevaluate = true;
    }
    Eval next = reevaluate ? Evaluate(data, w_next, config.l2_penalty)
                           : std::move(step.eval);
    ++iter;

    if (hs && !active && step.hit_bound) {
      active = true;
      memory.Clear();
    } else {
      const Vector grad_next = active ? hs->Tangent(next.g) : next.g;
      memory.Push(w_next - w, grad_next - grad);
    }
    w = std::move(w_next);
    cur = std::move(next);
  }

  if (hs && active) {
    residual = hs->Multiplier(cur.g) >= 0.0 ? InfNorm(hs->Tangent(cur.g))
                                            : InfNorm(cur.g);
  } else {
    residual = InfNorm(cur.g);
  }
  if (residual > tol) {
    throw Error(ErrorCode::kNoConvergence,
                fmt::format("line search stalled after {} iterations with "
                            "gradient norm {:.3e}",
                            iter, residual));
  }
  const bool on_plane =
      hs && std::abs(hs->a.dot(w) - hs->bound) <= plane_tol * (1.0 + std::abs(hs->bound));
  Log().debug("train: iterations={} residual={:.3e} objective={:.12g} active={} releases={}",
              iter, residual, cur.f, active && on_plane, releases);

  TrainResult result;
  result.model = LinearModel(std::move(w));
  result.objective = cur.f;
  result.iterations = iter;
  result.residual = residual;
  result.constraint_active =
      active && on_plane && hs->Multiplier(cur.g) >= 0.0;
  return result;
}

}  // namespace

void TrainConfig::Validate() const {
  if (!(l2_penalty >= 0.0) || !std::isfinite(l2_penalty)) {
    throw Error(ErrorCode::kInvalidConfig, "l2_penalty must be finite and >= 0");
  }
  if (max_iters < 1) {
    throw Error(ErrorCode::kInvalidConfig, "max_iters must be positive");
  }
  if (!(grad_tol > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "grad_tol must be positive");
  }
  if (!(constraint_tol >= 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "constraint_tol must be >= 0");
  }
}

nlohmann::json ToJson(const TrainConfig& config) {
  return {{"l2_penalty", config.l2_penalty},
          {"max_iters", config.max_iters},
          {"grad_tol", config.grad_tol},
          {"constraint_tol", config.constraint_tol}};
}

TrainConfig TrainConfigFromJson(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::kInvalidConfig, "trainer config must be an object");
  }
  TrainConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "l2_penalty") {
        c.l2_penalty = value.get<double>();
      } else if (key == "max_iters") {
        c.max_iters = value.get<int>();
      } else if (key == "grad_tol") {
        c.grad_tol = value.get<double>();
      } else if (key == "constraint_tol") {
        c.constraint_tol = value.get<double>();
      } else {
        throw Error(ErrorCode::kInvalidConfig,
                    fmt::format("unknown trainer key '{}'", key));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, e.what());
  }
  c.Validate();
  return c;
}

ScoreConstraint::ScoreConstraint(int example_index,
                                 ConstraintDirection direction, double p)
    : example_index_(example_index), direction_(direction) {
  if (example_index < 0) {
    throw Error(ErrorCode::kInvalidSpec, "example_index must be >= 0");
  }
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error(ErrorCode::kInvalidSpec,
                fmt::format("threshold probability {} outside [0, 1]", p));
  }
  threshold_ = std::clamp(p, kMinProbability, kMaxProbability);
  score_bound_ = Logit(threshold_);
}

double RegularizedObjective(const LinearModel& model, const Dataset& data,
                            double l2_penalty) {
  return LogLoss(model, data) + 0.5 * l2_penalty * model.w().squaredNorm();
}

Vector RegularizedGradient(const LinearModel& model, const Dataset& data,
                           double l2_penalty) {
  return LossGradient(model, data) + l2_penalty * model.w();
}

TrainResult TrainBaseline(const Dataset& data, const TrainConfig& config) {
  config.Validate();
  return Minimize(data, std::nullopt, Vector::Zero(data.dim()), config);
}

namespace {

Halfspace MakeHalfspace(const Dataset& data, const ScoreConstraint& c) {
  if (c.example_index() >= data.n()) {
    throw Error(ErrorCode::kInvalidSpec,
                fmt::format("example_index {} out of range for {} rows",
                            c.example_index(), data.n()));
  }
  Halfspace hs;
  hs.a = data.x().row(c.example_index()).transpose();
  hs.a_sq = hs.a.squaredNorm();
  if (hs.a_sq == 0.0) {
    throw Error(ErrorCode::kZeroFeatureVector, "constraint row is all zeros");
  }
  hs.bound = c.score_bound();
  hs.sign = c.direction() == ConstraintDirection::kAtMost ? 1.0 : -1.0;
  return hs;
}

}  // namespace

TrainResult TrainCandidate(const Dataset& data,
                           const ScoreConstraint& constraint,
                           const std::optional<LinearModel>& warm_start,
                           const TrainConfig& config) {
  config.Validate();
  const Halfspace hs = MakeHalfspace(data, constraint);
  Vector w = Vector::Zero(data.dim());
  if (warm_start) {
    if (warm_start->dim() != data.dim()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "warm start dimension differs from the data");
    }
    w = warm_start->w();
  }
  return Minimize(data, hs, std::move(w), config);
}

Vector ProjectHalfspace(const Vector& w, const Vector& x, double bound,
                        ConstraintDirection direction) {
  if (w.size() != x.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "w and x differ in length");
  }
  const double x_sq = x.squaredNorm();
  if (x_sq == 0.0) {
    throw Error(ErrorCode::kZeroFeatureVector, "cannot project onto x = 0");
  }
  const double excess = x.dot(w) - bound;
  if (direction == ConstraintDirection::kAtMost) {
    return excess > 0.0 ? Vector(w - excess / x_sq * x) : w;
  }
  return excess < 0.0 ? Vector(w - excess / x_sq * x) : w;
}

Vector ProjectHalfspace(const Vector& w, const ScoreConstraint& constraint,
                        const Vector& x) {
  return ProjectHalfspace(w, x, constraint.score_bound(),
                          constraint.direction());
}

double StationarityResidual(const LinearModel& model, const Dataset& data,
                            const std::optional<ScoreConstraint>& constraint,
                            double l2_penalty) {
  const Vector g = RegularizedGradient(model, data, l2_penalty);
  if (!constraint) return InfNorm(g);
  const Halfspace hs = MakeHalfspace(data, *constraint);
  const double gap = hs.a.dot(model.w()) - hs.bound;
  const bool on_plane = std::abs(gap) <= 1e-9 * (1.0 + std::abs(hs.bound));
  if (!on_plane || hs.Multiplier(g) <= 0.0) return InfNorm(g);
  return InfNorm(hs.Tangent(g));
}

}  // namespace mpaudit
