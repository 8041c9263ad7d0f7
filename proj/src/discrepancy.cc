#include "mpaudit/discrepancy.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <queue>

#include <fmt/format.h>

#include "mpaudit/error.h"
#include "mpaudit/log.h"

namespace mpaudit {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kIntegralityTol = 1e-6;
constexpr double kLossTol = 1e-9;
constexpr double kBoundSlack = 1e-6;

int FloorBound(double bound) {
  return static_cast<int>(std::floor(bound + kBoundSlack));
}

}  // namespace

double DefaultCoefficientBound(const LinearModel& baseline) {
  const double w_inf = baseline.dim() == 0 ? 0.0 : baseline.w().cwiseAbs().maxCoeff();
  return std::max(10.0, 2.0 * w_inf);
}

DiscrepancyProblem BuildProblem(const Dataset& data, const LinearModel& baseline,
                                double epsilon, double delta,
                                const CoefficientBounds& bounds) {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw Error(ErrorCode::kInvalidSpec, "delta must lie in (0, 1)");
  }
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw Error(ErrorCode::kInvalidSpec, "epsilon must be positive and finite");
  }
  const int dim = data.dim();
  if (baseline.dim() != dim || bounds.lower.size() != dim ||
      bounds.upper.size() != dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                "baseline or bounds differ from the data dimension");
  }
  for (int j = 0; j < dim; ++j) {
    if (!std::isfinite(bounds.lower(j)) || !std::isfinite(bounds.upper(j)) ||
        !(bounds.lower(j) < bounds.upper(j))) {
      throw Error(ErrorCode::kInvalidBounds,
                  fmt::format("coefficient {} needs finite bounds lower < upper", j));
    }
    if (!(bounds.lower(j) < baseline.w()(j) && baseline.w()(j) < bounds.upper(j))) {
      throw Error(ErrorCode::kBaselineOutsideBox,
                  fmt::format("baseline coefficient {} = {} not inside [{}, {}]", j,
                              baseline.w()(j), bounds.lower(j), bounds.upper(j)));
    }
  }

  DiscrepancyProblem p{.data = data, .baseline = baseline};
  p.baseline_loss = LogLoss(baseline, data);
  p.epsilon = epsilon;
  p.delta = delta;
  p.coef_lower = bounds.lower;
  p.coef_upper = bounds.upper;
  p.baseline_risk = Predictions(baseline, data);

  const int n = data.n();
  p.v_plus = Vector::Constant(n, -kInf);
  p.v_minus = Vector::Constant(n, kInf);
  p.big_m_plus = Vector::Zero(n);
  p.big_m_minus = Vector::Zero(n);
  p.active_plus.assign(n, false);
  p.active_minus.assign(n, false);
  for (int i = 0; i < n; ++i) {
    const auto x = data.x().row(i);
    double max_score = 0.0;
    double min_score = 0.0;
    for (int j = 0; j < dim; ++j) {
      const double a = bounds.upper(j) * x(j);
      const double b = bounds.lower(j) * x(j);
      max_score += std::max(a, b);
      min_score += std::min(a, b);
    }
    const double g0 = p.baseline_risk(i);
    if (g0 - delta > 0.0) {
      p.active_plus[i] = true;
      p.v_plus(i) = Logit(g0 - delta);
      p.big_m_plus(i) = max_score - p.v_plus(i);
    }
    if (g0 + delta < 1.0) {
      p.active_minus[i] = true;
      p.v_minus(i) = Logit(g0 + delta);
      p.big_m_minus(i) = p.v_minus(i) - min_score;
    }
    if (p.active_plus[i] && p.active_minus[i] && !(p.v_plus(i) < p.v_minus(i))) {
      throw Error(ErrorCode::kInvalidSpec,
                  fmt::format("example {}: both deviation sides can hold at once", i));
    }
  }
  p.cuts.push_back(MakeLossCut(p, baseline.w()));
  return p;
}

LossCut MakeLossCut(const DiscrepancyProblem& problem, const Vector& w_hat) {
  const LinearModel model(w_hat);
  LossCut cut;
  cut.gradient = LossGradient(model, problem.data);
  // L(w) >= L(w_hat) + g.(w - w_hat), so L(w) <= limit implies
  // g.w <= limit - L(w_hat) + g.w_hat.
  cut.rhs = problem.loss_limit() - LogLoss(model, problem.data) +
            cut.gradient.dot(w_hat);
  return cut;
}

int DeviationCount(const DiscrepancyProblem& problem, const Vector& w) {
  const Vector p = Predictions(LinearModel(w), problem.data);
  int count = 0;
  for (int i = 0; i < problem.n(); ++i) {
    if (std::abs(p(i) - problem.baseline_risk(i)) >=
        problem.delta - kDeviationSlack) {
      ++count;
    }
  }
  return count;
}

MilpModel BuildMilpModel(const DiscrepancyProblem& problem, MilpLayout* layout) {
  MilpModel model;
  model.name = "DISCREP";
  model.maximize = true;
  MilpLayout lay;
  const int n = problem.n();
  const int dim = problem.dim();
  for (int j = 0; j < dim; ++j) {
    lay.w_cols.push_back(model.AddColumn(
        {fmt::format("W{}", j), problem.coef_lower(j), problem.coef_upper(j), 0.0,
         false}));
  }
  lay.d_col.assign(n, -1);
  lay.plus_col.assign(n, -1);
  lay.minus_col.assign(n, -1);
  for (int i = 0; i < n; ++i) {
    if (!problem.active_plus[i] && !problem.active_minus[i]) continue;
    lay.d_col[i] = model.AddColumn({fmt::format("D{}", i), 0.0, 1.0, 1.0, true});
    if (problem.active_plus[i]) {
      lay.plus_col[i] = model.AddColumn({fmt::format("ZP{}", i), 0.0, 1.0, 0.0, true});
    }
    if (problem.active_minus[i]) {
      lay.minus_col[i] =
          model.AddColumn({fmt::format("ZM{}", i), 0.0, 1.0, 0.0, true});
    }
  }
  for (int i = 0; i < n; ++i) {
    if (lay.d_col[i] < 0) continue;
    const auto x = problem.data.x().row(i);
    // d_i - z+_i - z-_i = 0
    SparseEntries link{{lay.d_col[i], 1.0}};
    if (lay.plus_col[i] >= 0) link.emplace_back(lay.plus_col[i], -1.0);
    if (lay.minus_col[i] >= 0) link.emplace_back(lay.minus_col[i], -1.0);
    model.AddRow({fmt::format("LK{}", i), RowSense::kEq, 0.0, link});
    if (lay.plus_col[i] >= 0) {
      // <w,x> + M+ z+ <= M+ + v+
      SparseEntries row;
      for (int j = 0; j < dim; ++j) row.emplace_back(lay.w_cols[j], x(j));
      row.emplace_back(lay.plus_col[i], problem.big_m_plus(i));
      model.AddRow({fmt::format("BP{}", i), RowSense::kLe,
                    problem.big_m_plus(i) + problem.v_plus(i), row});
    }
    if (lay.minus_col[i] >= 0) {
      // -<w,x> + M- z- <= M- - v-
      SparseEntries row;
      for (int j = 0; j < dim; ++j) row.emplace_back(lay.w_cols[j], -x(j));
      row.emplace_back(lay.minus_col[i], problem.big_m_minus(i));
      model.AddRow({fmt::format("BM{}", i), RowSense::kLe,
                    problem.big_m_minus(i) - problem.v_minus(i), row});
    }
  }
  for (size_t k = 0; k < problem.cuts.size(); ++k) {
    SparseEntries row;
    for (int j = 0; j < dim; ++j) {
      row.emplace_back(lay.w_cols[j], problem.cuts[k].gradient(j));
    }
    lay.cut_rows.push_back(model.AddRow(
        {fmt::format("CT{}", k), RowSense::kLe, problem.cuts[k].rhs, row}));
  }
  if (layout != nullptr) *layout = std::move(lay);
  return model;
}

void MilpConfig::Validate() const {
  if (!(mip_gap >= 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "mip_gap must be >= 0");
  }
  if (!(time_limit_secs > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "time_limit_secs must be positive");
  }
  if (node_limit < 0) {
    throw Error(ErrorCode::kInvalidConfig, "node_limit must be >= 0");
  }
  if (!(coef_bound >= 0.0) || !std::isfinite(coef_bound)) {
    throw Error(ErrorCode::kInvalidConfig, "coef_bound must be finite and >= 0");
  }
}

nlohmann::json ToJson(const MilpConfig& config) {
  return {{"mip_gap", config.mip_gap},
          {"time_limit_secs", config.time_limit_secs},
          {"node_limit", config.node_limit},
          {"coef_bound", config.coef_bound},
          {"cut_mode", config.cut_mode == CutMode::kInteger ? "integer" : "lp"}};
}

MilpConfig MilpConfigFromJson(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::kInvalidConfig, "milp config must be an object");
  }
  MilpConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "mip_gap") {
        c.mip_gap = value.get<double>();
      } else if (key == "time_limit_secs") {
        c.time_limit_secs = value.get<double>();
      } else if (key == "node_limit") {
        c.node_limit = value.get<long>();
      } else if (key == "coef_bound") {
        c.coef_bound = value.get<double>();
      } else if (key == "cut_mode") {
        const auto mode = value.get<std::string>();
        if (mode == "integer") {
          c.cut_mode = CutMode::kInteger;
        } else if (mode == "lp") {
          c.cut_mode = CutMode::kLp;
        } else {
          throw Error(ErrorCode::kInvalidConfig,
                      fmt::format("cut_mode '{}' is not integer or lp", mode));
        }
      } else {
        throw Error(ErrorCode::kInvalidConfig,
                    fmt::format("unknown milp key '{}'", key));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, e.what());
  }
  c.Validate();
  return c;
}

std::string BnbStatusName(BnbStatus status) {
  switch (status) {
    case BnbStatus::kOptimal:
      return "optimal";
    case BnbStatus::kTimeLimit:
      return "time_limit";
    case BnbStatus::kNodeLimit:
      return "node_limit";
    case BnbStatus::kInfeasibleLevelSet:
      return "infeasible_level_set";
  }
  return "optimal";
}

namespace {

struct Node {
  double bound = 0.0;
  int depth = 0;
  long id = 0;
  std::vector<std::pair<int, char>> fixings;
};

// Best bound first; deeper nodes, then older nodes, break ties.
struct NodeOrder {
  bool operator()(const Node& a, const Node& b) const {
    if (a.bound != b.bound) return a.bound < b.bound;
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.id > b.id;
  }
};

class BranchAndBound {
 public:
  BranchAndBound(const DiscrepancyProblem& problem, const MilpConfig& config)
      : problem_(problem),
        config_(config),
        model_(BuildMilpModel(problem, &layout_)),
        lp_(MakeRelaxation(model_)) {
    for (int i = 0; i < problem.n(); ++i) {
      for (int col : {layout_.d_col[i], layout_.plus_col[i], layout_.minus_col[i]}) {
        if (col >= 0) integer_cols_.push_back(col);
      }
    }
    std::sort(integer_cols_.begin(), integer_cols_.end());
    result_.cuts = problem.cuts;
  }

  BnbResult Run(const std::vector<LinearModel>& warm_starts) {
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
      return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
    };

    Offer(problem_.baseline.w(), Keep::kNever);
    for (const LinearModel& m : warm_starts) {
      if (m.dim() != problem_.dim() || !InBox(m.w())) continue;
      if (LogLoss(m, problem_.data) > problem_.loss_limit() + kLossTol) continue;
      Offer(m.w(), Keep::kNever);
    }

    std::priority_queue<Node, std::vector<Node>, NodeOrder> open;
    // Every modelled example deviating is the trivial root bound.
    const double root_bound = static_cast<double>(std::count_if(
        layout_.d_col.begin(), layout_.d_col.end(), [](int c) { return c >= 0; }));
    open.push(Node{root_bound, 0, next_id_++, {}});
    bool root_infeasible = false;
    BnbStatus status = BnbStatus::kOptimal;

    while (!open.empty()) {
      if (FloorBound(open.top().bound) <= incumbent_count_) break;
      if (GapClosed(GlobalBound(open))) break;
      if (config_.node_limit > 0 && result_.node_count >= config_.node_limit) {
        status = BnbStatus::kNodeLimit;
        break;
      }
      if (elapsed() >= config_.time_limit_secs) {
        status = BnbStatus::kTimeLimit;
        break;
      }
      Node node = open.top();
      open.pop();
      ++result_.node_count;
      const bool infeasible = !Process(node, open);
      if (infeasible && node.depth == 0) root_infeasible = true;
      result_.trace.emplace_back(GlobalBound(open), incumbent_count_);
      Log().trace("node {} depth {} bound {:.6g} incumbent {} open {}", node.id,
                  node.depth, node.bound, incumbent_count_, open.size());
    }

    result_.objective = incumbent_count_;
    result_.incumbent = LinearModel(incumbent_w_);
    result_.best_bound = status == BnbStatus::kOptimal
                             ? static_cast<double>(incumbent_count_)
                             : GlobalBound(open);
    result_.gap = (result_.best_bound - result_.objective) /
                  std::max(1.0, static_cast<double>(result_.objective));
    result_.status = root_infeasible ? BnbStatus::kInfeasibleLevelSet : status;
    result_.lp_iterations = lp_.iterations();
    Log().info("discrepancy: status={} objective={} bound={} nodes={} cuts={} "
               "lp_iterations={} secs={:.2f}",
               BnbStatusName(result_.status), result_.objective, result_.best_bound,
               result_.node_count, result_.cut_count, result_.lp_iterations,
               elapsed());
    return std::move(result_);
  }

 private:
  bool InBox(const Vector& w) const {
    for (int j = 0; j < problem_.dim(); ++j) {
      if (w(j) < problem_.coef_lower(j) || w(j) > problem_.coef_upper(j)) {
        return false;
      }
    }
    return true;
  }

  double GlobalBound(
      const std::priority_queue<Node, std::vector<Node>, NodeOrder>& open) const {
    if (open.empty()) return incumbent_count_;
    return std::max<double>(incumbent_count_, FloorBound(open.top().bound));
  }

  bool GapClosed(double bound) const {
    return (bound - incumbent_count_) /
               std::max(1.0, static_cast<double>(incumbent_count_)) <=
           config_.mip_gap;
  }

  enum class Keep { kNever, kIfImproving, kAlways };

  // Loss-feasible point in the box; becomes the incumbent if it deviates on
  // more examples. `keep` controls what lands in intermediate_models.
  void Offer(const Vector& w, Keep keep) {
    const int count = DeviationCount(problem_, w);
    const bool improves = count > incumbent_count_ || incumbent_w_.size() == 0;
    if (keep == Keep::kAlways || (keep == Keep::kIfImproving && improves)) {
      result_.intermediate_models.emplace_back(w);
    }
    if (improves) {
      incumbent_count_ = std::max(count, incumbent_count_);
      incumbent_w_ = w;
    }
  }

  void ApplyFixings(const Node& node) {
    std::vector<double> lo(model_.columns.size(), 0.0);
    std::vector<double> hi(model_.columns.size(), 1.0);
    for (const auto& [col, v] : node.fixings) lo[col] = hi[col] = v;
    for (int col : integer_cols_) {
      if (lp_.col_lo(col) != lo[col] || lp_.col_hi(col) != hi[col]) {
        lp_.SetColumnBounds(col, lo[col], hi[col]);
      }
    }
  }

  void AddCut(const Vector& w) {
    LossCut cut = MakeLossCut(problem_, w);
    SparseEntries row;
    for (int j = 0; j < problem_.dim(); ++j) {
      row.emplace_back(layout_.w_cols[j], cut.gradient(j));
    }
    lp_.AddRow(row, -kInf, cut.rhs);
    result_.cuts.push_back(std::move(cut));
    ++result_.cut_count;
  }

  // Returns false when the node relaxation is infeasible.
  bool Process(const Node& node,
               std::priority_queue<Node, std::vector<Node>, NodeOrder>& open) {
    ApplyFixings(node);
    while (true) {
      if (lp_.Solve() != DualSimplex::Status::kOptimal) return false;
      const double bound = -lp_.objective();
      if (FloorBound(bound) <= incumbent_count_) return true;
      const Vector x = lp_.primal();
      Vector w(problem_.dim());
      for (int j = 0; j < problem_.dim(); ++j) w(j) = x(layout_.w_cols[j]);
      const double loss = LogLoss(LinearModel(w), problem_.data);
      const bool loss_ok = loss <= problem_.loss_limit() + kLossTol;

      int branch_col = -1;
      double best_frac = kIntegralityTol;
      // Most fractional d first, then most fractional indicator.
      for (const auto* cols : {&layout_.d_col, &integer_cols_}) {
        for (int col : *cols) {
          if (col < 0) continue;
          const double frac = std::min(x(col), 1.0 - x(col));
          if (frac > best_frac) {
            best_frac = frac;
            branch_col = col;
          }
        }
        if (branch_col >= 0) break;
      }

      if (branch_col < 0) {
        if (loss_ok) {
          Offer(w, Keep::kAlways);
          return true;
        }
        AddCut(w);
        continue;
      }
      if (loss_ok) {
        Offer(w, Keep::kIfImproving);
        if (FloorBound(bound) <= incumbent_count_) return true;
      } else if (config_.cut_mode == CutMode::kLp) {
        AddCut(w);
        continue;
      }
      for (char v : {1, 0}) {
        Node child{bound, node.depth + 1, next_id_++, node.fixings};
        child.fixings.emplace_back(branch_col, v);
        open.push(std::move(child));
      }
      return true;
    }
  }

  const DiscrepancyProblem& problem_;
  MilpConfig config_;
  MilpLayout layout_;
  MilpModel model_;
  DualSimplex lp_;
  std::vector<int> integer_cols_;
  BnbResult result_;
  int incumbent_count_ = 0;
  Vector incumbent_w_;
  long next_id_ = 0;
};

}  // namespace

BnbResult SolveDiscrepancy(const DiscrepancyProblem& problem,
                           const MilpConfig& config,
                           const std::vector<LinearModel>& warm_starts) {
  config.Validate();
  BranchAndBound bnb(problem, config);
  return bnb.Run(warm_starts);
}

CandidatePool HarvestCandidates(const BnbResult& result, CandidatePool pool) {
  for (size_t k = 0; k < result.intermediate_models.size(); ++k) {
    pool.Add(result.intermediate_models[k],
             Provenance::OuterApprox(static_cast<int>(k)));
  }
  return pool;
}

}  // namespace mpaudit
