#include "mpaudit/multiplicity.h"

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "mpaudit/error.h"
#include "mpaudit/log.h"

namespace mpaudit {
namespace {

constexpr int kPoolFormatVersion = 1;

size_t KindIndex(MetricKind kind) { return static_cast<size_t>(kind); }

std::string DirectionName(ConstraintDirection d) {
  return d == ConstraintDirection::kAtMost ? "at_most" : "at_least";
}

ConstraintDirection ParseDirection(const std::string& s) {
  if (s == "at_most") return ConstraintDirection::kAtMost;
  if (s == "at_least") return ConstraintDirection::kAtLeast;
  throw Error(ErrorCode::kParseError, fmt::format("unknown direction '{}'", s));
}

Provenance::Kind ParseProvenanceKind(const std::string& s) {
  if (s == "baseline") return Provenance::Kind::kBaseline;
  if (s == "candidate") return Provenance::Kind::kCandidate;
  if (s == "outer_approximation") return Provenance::Kind::kOuterApprox;
  throw Error(ErrorCode::kParseError, fmt::format("unknown provenance '{}'", s));
}

void CheckStrictlyIncreasing(const std::vector<double>& grid,
                             const char* name) {
  if (grid.empty()) {
    throw Error(ErrorCode::kInvalidConfig, fmt::format("{} is empty", name));
  }
  for (size_t k = 0; k < grid.size(); ++k) {
    if (!(grid[k] > 0.0) || !std::isfinite(grid[k])) {
      throw Error(ErrorCode::kInvalidConfig,
                  fmt::format("{} values must be positive", name));
    }
    if (k > 0 && !(grid[k] > grid[k - 1])) {
      throw Error(ErrorCode::kInvalidConfig,
                  fmt::format("{} must be strictly increasing", name));
    }
  }
}

}  // namespace

std::string EstimateKindName(EstimateKind kind) {
  return kind == EstimateKind::kExactForLoss ? "exact_for_loss"
                                             : "conservative";
}

std::string ProvenanceKindName(Provenance::Kind kind) {
  switch (kind) {
    case Provenance::Kind::kBaseline:
      return "baseline";
    case Provenance::Kind::kCandidate:
      return "candidate";
    case Provenance::Kind::kOuterApprox:
      return "outer_approximation";
  }
  return "baseline";
}

CandidatePool::CandidatePool(Dataset data, std::optional<Dataset> eval,
                             const LinearModel& baseline, int ece_bins,
                             bool auc_tie_credit)
    : data_(std::move(data)),
      eval_(std::move(eval)),
      ece_bins_(ece_bins),
      auc_tie_credit_(auc_tie_credit) {
  if (ece_bins < 1) throw Error(ErrorCode::kInvalidSpec, "ece_bins must be >= 1");
  if (eval_ && eval_->feature_names() != data_.feature_names()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "evaluation sample features differ from the training data");
  }
  Add(baseline, Provenance::Baseline());
}

MetricSpec CandidatePool::Spec(MetricKind kind) const {
  MetricSpec spec;
  spec.kind = kind;
  spec.ece_bins = ece_bins_;
  spec.auc_tie_credit = auc_tie_credit_;
  return spec;
}

double CandidatePool::MetricValue(size_t index, const MetricSpec& metric) const {
  const MetricSpec own = Spec(metric.kind);
  const bool matches = metric.kind == MetricKind::kLogLoss ||
                       (metric.kind == MetricKind::kAucError &&
                        metric.auc_tie_credit == own.auc_tie_credit) ||
                       (metric.kind == MetricKind::kEce &&
                        metric.ece_bins == own.ece_bins);
  if (matches) return members_.at(index).metrics[KindIndex(metric.kind)];
  return Evaluate(members_.at(index).model, data_, metric);
}

void CandidatePool::Add(LinearModel model, const Provenance& provenance) {
  if (model.dim() != data_.dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "model dimension differs from the pool data");
  }
  Member m;
  const Vector scores = Scores(model, data_);
  for (MetricKind kind :
       {MetricKind::kLogLoss, MetricKind::kAucError, MetricKind::kEce}) {
    m.metrics[KindIndex(kind)] = EvaluateFromScores(scores, data_.y(), Spec(kind));
  }
  m.predictions = Predictions(model, eval_data());
  m.model = std::move(model);
  m.provenance = provenance;
  members_.push_back(std::move(m));
}

void CandidatePool::RecordFailure(TrainingFailure failure) {
  failures_.push_back(std::move(failure));
}

std::vector<ScoreConstraint> CandidateConstraints(int example_index,
                                                  double baseline_risk,
                                                  const ThresholdSpec& spec) {
  std::vector<ScoreConstraint> out;
  if (spec.mode == ThresholdMode::kAligned) {
    if (!(spec.delta > 0.0 && spec.delta < 1.0)) {
      throw Error(ErrorCode::kInvalidConfig, "aligned delta must be in (0, 1)");
    }
    out.emplace_back(example_index, ConstraintDirection::kAtMost,
                     std::max(0.0, baseline_risk - spec.delta));
    out.emplace_back(example_index, ConstraintDirection::kAtLeast,
                     std::min(1.0, baseline_risk + spec.delta));
    return out;
  }
  std::vector<double> grid = spec.grid;
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  for (double p : grid) {
    if (!(p > 0.0 && p < 1.0)) {
      throw Error(ErrorCode::kInvalidConfig,
                  fmt::format("threshold {} outside (0, 1)", p));
    }
    if (std::abs(p - baseline_risk) < 1e-6) continue;
    out.emplace_back(example_index,
                     p < baseline_risk ? ConstraintDirection::kAtMost
                                       : ConstraintDirection::kAtLeast,
                     p);
  }
  return out;
}

namespace {

struct ExampleOutput {
  std::vector<std::pair<LinearModel, Provenance>> models;
  std::vector<TrainingFailure> failures;
  int iterations = 0;
};

ExampleOutput TrainExample(const Dataset& data, const LinearModel& baseline,
                           double baseline_risk, int i,
                           const PoolOptions& options) {
  ExampleOutput out;
  std::optional<LinearModel> warm = baseline;
  for (const ScoreConstraint& c :
       CandidateConstraints(i, baseline_risk, options.thresholds)) {
    try {
      TrainResult r = TrainCandidate(data, c, warm, options.train);
      out.iterations += r.iterations;
      warm = r.model;
      out.models.emplace_back(
          std::move(r.model),
          Provenance::Candidate(i, c.threshold_probability(), c.direction()));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNoConvergence) throw;
      out.failures.push_back({i, c.threshold_probability(), e.what()});
    }
  }
  return out;
}

}  // namespace

CandidatePool BuildPool(const Dataset& data, const LinearModel& baseline,
                        const PoolOptions& options,
                        const std::optional<Dataset>& eval) {
  options.train.Validate();
  CandidatePool pool(data, eval, baseline, options.ece_bins,
                     options.auc_tie_credit);
  const Vector risk = Predictions(baseline, data);
  std::vector<ExampleOutput> outputs(data.n());

  const int threads = std::clamp(options.threads, 1, std::max(1, data.n()));
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (int i = next++; i < data.n(); i = next++) {
      try {
        outputs[i] = TrainExample(data, baseline, risk(i), i, options);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool_threads;
    for (int t = 0; t < threads; ++t) pool_threads.emplace_back(worker);
    for (auto& t : pool_threads) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  long total_iterations = 0;
  for (ExampleOutput& out : outputs) {
    total_iterations += out.iterations;
    for (auto& [model, provenance] : out.models) {
      pool.Add(std::move(model), provenance);
    }
    for (auto& f : out.failures) pool.RecordFailure(std::move(f));
  }
  Log().info("pool: {} members, {} failures, {} optimizer iterations",
             pool.size(), pool.failures().size(), total_iterations);
  return pool;
}

LevelSetSpec MakeLevelSet(const CandidatePool& pool, const MetricSpec& metric,
                          double epsilon) {
  return {metric, epsilon, pool.MetricValue(0, metric)};
}

std::vector<int> FilterLevelSet(const CandidatePool& pool,
                                const LevelSetSpec& spec) {
  if (!(spec.epsilon > 0.0)) {
    throw Error(ErrorCode::kInvalidSpec, "epsilon must be positive");
  }
  const double limit = spec.baseline_value + spec.epsilon;
  std::vector<int> out{0};
  for (size_t k = 1; k < pool.size(); ++k) {
    if (pool.MetricValue(k, spec.metric) <= limit) {
      out.push_back(static_cast<int>(k));
    }
  }
  return out;
}

ViableRange ViableRanges(const CandidatePool& pool, const LevelSetSpec& spec) {
  const std::vector<int> members = FilterLevelSet(pool, spec);
  ViableRange range;
  range.lo = pool.baseline().predictions;
  range.hi = pool.baseline().predictions;
  for (int k : members) {
    const Vector& p = pool.members()[k].predictions;
    range.lo = range.lo.cwiseMin(p);
    range.hi = range.hi.cwiseMax(p);
  }
  range.estimate_kind = spec.metric.kind == MetricKind::kLogLoss
                            ? EstimateKind::kExactForLoss
                            : EstimateKind::kConservative;
  return range;
}

namespace {

Vector MaxDeviation(const CandidatePool& pool, const ViableRange& range) {
  const Vector& base = pool.baseline().predictions;
  return (range.hi - base).cwiseMax(base - range.lo);
}

bool Deviates(double deviation, double delta) {
  return deviation >= delta - kDeviationSlack;
}

}  // namespace

AmbiguityResult Ambiguity(const CandidatePool& pool, const LevelSetSpec& spec,
                          double delta) {
  AmbiguityResult r;
  r.max_deviation = MaxDeviation(pool, ViableRanges(pool, spec));
  r.ambiguous.resize(r.max_deviation.size());
  int count = 0;
  for (Eigen::Index i = 0; i < r.max_deviation.size(); ++i) {
    r.ambiguous[i] = Deviates(r.max_deviation(i), delta);
    count += r.ambiguous[i] ? 1 : 0;
  }
  r.ambiguity = static_cast<double>(count) / r.max_deviation.size();
  return r;
}

namespace {

// Deviation count of member k, restricted to rows with mask[i] (or all rows).
int DeviationCount(const CandidatePool& pool, int k, double delta,
                   const std::vector<char>* mask) {
  const Vector& base = pool.baseline().predictions;
  const Vector& p = pool.members()[k].predictions;
  int count = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (mask != nullptr && !(*mask)[i]) continue;
    if (Deviates(std::abs(p(i) - base(i)), delta)) ++count;
  }
  return count;
}

DiscrepancyBound BestMember(const CandidatePool& pool,
                            const std::vector<int>& members, double delta,
                            const std::vector<char>* mask, int rows) {
  DiscrepancyBound best;
  for (int k : members) {
    const int c = DeviationCount(pool, k, delta, mask);
    if (c > best.count) {
      best.count = c;
      best.model_index = k;
    }
  }
  best.value = rows > 0 ? static_cast<double>(best.count) / rows : 0.0;
  return best;
}

}  // namespace

DiscrepancyBound DiscrepancyLowerBound(const CandidatePool& pool,
                                       const LevelSetSpec& spec, double delta) {
  return BestMember(pool, FilterLevelSet(pool, spec), delta, nullptr,
                    pool.eval_data().n());
}

MultiplicityReport Sweep(const CandidatePool& pool, const MetricSpec& metric,
                         const std::vector<double>& epsilon_grid,
                         const std::vector<double>& delta_grid) {
  CheckStrictlyIncreasing(epsilon_grid, "epsilon_grid");
  CheckStrictlyIncreasing(delta_grid, "delta_grid");
  MultiplicityReport report;
  report.metric = metric;
  report.epsilon_grid = epsilon_grid;
  report.delta_grid = delta_grid;
  report.estimate_kind = metric.kind == MetricKind::kLogLoss
                             ? EstimateKind::kExactForLoss
                             : EstimateKind::kConservative;

  const Dataset& eval = pool.eval_data();
  const std::vector<std::string> levels =
      eval.has_groups() ? eval.GroupLevels() : std::vector<std::string>{};
  std::vector<std::vector<char>> masks;
  std::vector<int> sizes;
  for (const std::string& g : levels) {
    std::vector<char> mask(eval.n());
    int size = 0;
    for (int i = 0; i < eval.n(); ++i) {
      mask[i] = eval.groups()[i] == g;
      size += mask[i];
    }
    masks.push_back(std::move(mask));
    sizes.push_back(size);
  }

  for (double eps : epsilon_grid) {
    const LevelSetSpec spec = MakeLevelSet(pool, metric, eps);
    const std::vector<int> members = FilterLevelSet(pool, spec);
    const Vector deviation = MaxDeviation(pool, ViableRanges(pool, spec));
    for (double delta : delta_grid) {
      MultiplicityCell cell;
      cell.epsilon = eps;
      cell.delta = delta;
      cell.level_set_size = static_cast<int>(members.size());
      int count = 0;
      for (Eigen::Index i = 0; i < deviation.size(); ++i) {
        count += Deviates(deviation(i), delta) ? 1 : 0;
      }
      cell.ambiguity = static_cast<double>(count) / eval.n();
      const DiscrepancyBound lb =
          BestMember(pool, members, delta, nullptr, eval.n());
      cell.discrepancy_lower_bound = lb.value;
      cell.discrepancy_model = lb.model_index;
      report.cells.push_back(cell);

      for (size_t g = 0; g < levels.size(); ++g) {
        GroupCell gc;
        gc.epsilon = eps;
        gc.delta = delta;
        gc.group = levels[g];
        gc.size = sizes[g];
        int in_group = 0;
        for (int i = 0; i < eval.n(); ++i) {
          if (masks[g][i] && Deviates(deviation(i), delta)) ++in_group;
        }
        gc.ambiguity = static_cast<double>(in_group) / sizes[g];
        gc.discrepancy_lower_bound =
            BestMember(pool, members, delta, &masks[g], sizes[g]).value;
        report.group_breakdown.push_back(gc);
      }
    }
    report.max_deviation.push_back(deviation);
  }
  return report;
}

namespace {

nlohmann::json ProvenanceToJson(const Provenance& p) {
  nlohmann::json j = {{"kind", ProvenanceKindName(p.kind)}};
  if (p.kind == Provenance::Kind::kCandidate) {
    j["example_index"] = p.example_index;
    j["threshold"] = p.threshold;
    j["direction"] = DirectionName(p.direction);
  } else if (p.kind == Provenance::Kind::kOuterApprox) {
    j["oa_iteration"] = p.oa_iteration;
  }
  return j;
}

Provenance ProvenanceFromJson(const nlohmann::json& j) {
  Provenance p;
  p.kind = ParseProvenanceKind(j.at("kind").get<std::string>());
  if (p.kind == Provenance::Kind::kCandidate) {
    p.example_index = j.at("example_index").get<int>();
    p.threshold = j.at("threshold").get<double>();
    p.direction = ParseDirection(j.at("direction").get<std::string>());
  } else if (p.kind == Provenance::Kind::kOuterApprox) {
    p.oa_iteration = j.at("oa_iteration").get<int>();
  }
  return p;
}

double ToLittleEndian(double v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    auto bits = std::bit_cast<std::uint64_t>(v);
    bits = __builtin_bswap64(bits);
    return std::bit_cast<double>(bits);
  }
}

}  // namespace

void SavePool(const CandidatePool& pool, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIoError,
                fmt::format("cannot create '{}': {}", dir, ec.message()));
  }
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : pool.members()) {
    members.push_back(
        {{"provenance", ProvenanceToJson(m.provenance)},
         {"metrics",
          {{"log_loss", m.metrics[KindIndex(MetricKind::kLogLoss)]},
           {"auc_error", m.metrics[KindIndex(MetricKind::kAucError)]},
           {"ece", m.metrics[KindIndex(MetricKind::kEce)]}}}});
  }
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : pool.failures()) {
    failures.push_back({{"example_index", f.example_index},
                        {"threshold", f.threshold},
                        {"message", f.message}});
  }
  const nlohmann::json index = {
      {"format_version", kPoolFormatVersion},
      {"n", pool.data().n()},
      {"eval_n", pool.eval_data().n()},
      {"separate_eval", pool.has_separate_eval()},
      {"feature_names", pool.data().feature_names()},
      {"ece_bins", pool.ece_bins()},
      {"auc_tie_credit", pool.auc_tie_credit()},
      {"members", members},
      {"failures", failures}};

  std::ofstream json_out(fs::path(dir) / "pool.json");
  json_out << index.dump(1) << '\n';
  std::ofstream bin_out(fs::path(dir) / "coefficients.bin", std::ios::binary);
  for (const auto& m : pool.members()) {
    for (double v : m.model.w()) {
      const double le = ToLittleEndian(v);
      bin_out.write(reinterpret_cast<const char*>(&le), sizeof le);
    }
  }
  if (!json_out || !bin_out) {
    throw Error(ErrorCode::kIoError, fmt::format("failed writing pool to '{}'", dir));
  }
}

CandidatePool LoadPool(const std::string& dir, const Dataset& data,
                       const std::optional<Dataset>& eval) {
  namespace fs = std::filesystem;
  std::ifstream json_in(fs::path(dir) / "pool.json");
  if (!json_in) {
    throw Error(ErrorCode::kIoError, fmt::format("cannot read '{}/pool.json'", dir));
  }
  nlohmann::json index;
  try {
    json_in >> index;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }

  try {
    if (index.at("format_version").get<int>() != kPoolFormatVersion) {
      throw Error(ErrorCode::kParseError, "unsupported pool format version");
    }
    if (index.at("n").get<int>() != data.n() ||
        index.at("feature_names").get<std::vector<std::string>>() !=
            data.feature_names() ||
        index.at("separate_eval").get<bool>() != eval.has_value() ||
        (eval && index.at("eval_n").get<int>() != eval->n())) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "pool archive was built on different data");
    }
    const auto& members = index.at("members");
    const size_t count = members.size();
    const size_t dim = data.dim();

    std::ifstream bin_in(fs::path(dir) / "coefficients.bin", std::ios::binary);
    std::vector<double> coefs(count * dim);
    bin_in.read(reinterpret_cast<char*>(coefs.data()),
                static_cast<std::streamsize>(coefs.size() * sizeof(double)));
    if (!bin_in || bin_in.peek() != std::char_traits<char>::eof()) {
      throw Error(ErrorCode::kParseError,
                  "coefficients.bin size does not match pool.json");
    }
    for (double& v : coefs) v = ToLittleEndian(v);
    auto row = [&](size_t k) {
      return LinearModel(Eigen::Map<const Vector>(coefs.data() + k * dim, dim));
    };

    if (count == 0 || ProvenanceFromJson(members[0].at("provenance")).kind !=
                          Provenance::Kind::kBaseline) {
      throw Error(ErrorCode::kParseError, "pool member 0 must be the baseline");
    }
    CandidatePool pool(data, eval, row(0), index.at("ece_bins").get<int>(),
                       index.at("auc_tie_credit").get<bool>());
    for (size_t k = 1; k < count; ++k) {
      pool.Add(row(k), ProvenanceFromJson(members[k].at("provenance")));
    }
    for (size_t k = 0; k < count; ++k) {
      const auto& stored = members[k].at("metrics");
      const auto& actual = pool.members()[k].metrics;
      const double diffs[] = {
          stored.at("log_loss").get<double>() - actual[0],
          stored.at("auc_error").get<double>() - actual[1],
          stored.at("ece").get<double>() - actual[2]};
      for (double d : diffs) {
        if (std::abs(d) > 1e-12) {
          throw Error(ErrorCode::kDimensionMismatch,
                      fmt::format("cached metrics of member {} do not match "
                                  "the supplied data",
                                  k));
        }
      }
    }
    for (const auto& f : index.at("failures")) {
      pool.RecordFailure({f.at("example_index").get<int>(),
                          f.at("threshold").get<double>(),
                          f.at("message").get<std::string>()});
    }
    return pool;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
}

}  // namespace mpaudit
