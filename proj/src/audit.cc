#include "mpaudit/audit.h"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include <fmt/format.h>

#include "mpaudit/error.h"
#include "mpaudit/log.h"
#include "mpaudit/plot.h"

namespace mpaudit {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

[[noreturn]] void ConfigError(const std::string& message) {
  throw Error(ErrorCode::kInvalidConfig, message);
}

void CheckGrid(const std::vector<double>& grid, const std::string& name,
               bool unit_interval) {
  if (grid.empty()) ConfigError(fmt::format("{} is empty", name));
  for (size_t k = 0; k < grid.size(); ++k) {
    const double v = grid[k];
    const bool ok = unit_interval ? (v > 0.0 && v < 1.0)
                                  : (v > 0.0 && std::isfinite(v));
    if (!ok) {
      ConfigError(fmt::format("{} value {} outside {}", name, v,
                              unit_interval ? "(0,1)" : "(0,inf)"));
    }
    if (k > 0 && !(grid[k - 1] < v)) {
      ConfigError(fmt::format("{} must be strictly increasing", name));
    }
  }
}

void CheckCell(const EpsilonDelta& cell, const std::string& name) {
  if (!(cell.epsilon > 0.0 && std::isfinite(cell.epsilon)) ||
      !(cell.delta > 0.0 && cell.delta < 1.0)) {
    ConfigError(fmt::format("{} ({}, {}) needs epsilon > 0 and delta in (0,1)",
                            name, cell.epsilon, cell.delta));
  }
}

std::string Resolve(const std::string& path, const std::string& base_dir) {
  const fs::path p(path);
  if (p.is_absolute()) return p.lexically_normal().string();
  return (fs::path(base_dir) / p).lexically_normal().string();
}

EpsilonDelta CellFromJson(const nlohmann::json& j, const std::string& name) {
  if (!j.is_array() || j.size() != 2) {
    ConfigError(fmt::format("{} must be an [epsilon, delta] pair", name));
  }
  return {j[0].get<double>(), j[1].get<double>()};
}

CsvSource CsvFromJson(const nlohmann::json& j, const std::string& base_dir) {
  if (!j.is_object()) ConfigError("data.csv must be an object");
  CsvSource csv;
  bool has_path = false;
  for (const auto& [key, value] : j.items()) {
    if (key == "path") {
      csv.path = Resolve(value.get<std::string>(), base_dir);
      has_path = true;
    } else if (key == "label") {
      csv.label = value.get<std::string>();
    } else if (key == "group") {
      if (!value.is_null()) csv.group = value.get<std::string>();
    } else if (key == "positive_label") {
      csv.positive_label = value.is_string() ? value.get<std::string>()
                                             : value.dump();
    } else {
      ConfigError(fmt::format("unknown data.csv key '{}'", key));
    }
  }
  if (!has_path) ConfigError("data.csv.path is required");
  return csv;
}

ThresholdSpec ThresholdsFromJson(const nlohmann::json& j) {
  if (!j.is_object()) ConfigError("thresholds must be an object");
  ThresholdSpec spec;
  for (const auto& [key, value] : j.items()) {
    if (key == "mode") {
      const auto mode = value.get<std::string>();
      if (mode == "grid") {
        spec.mode = ThresholdMode::kGrid;
      } else if (mode == "aligned") {
        spec.mode = ThresholdMode::kAligned;
      } else {
        ConfigError(fmt::format("threshold mode '{}' is not grid or aligned", mode));
      }
    } else if (key == "grid") {
      spec.grid = value.get<std::vector<double>>();
    } else if (key == "delta") {
      spec.delta = value.get<double>();
    } else {
      ConfigError(fmt::format("unknown thresholds key '{}'", key));
    }
  }
  return spec;
}

MetricSpec Configured(MetricSpec metric, const AuditConfig& config) {
  metric.ece_bins = config.ece_bins;
  metric.auc_tie_credit = config.auc_tie_credit;
  return metric;
}

// Index of the grid value nearest to `v`; ties go to the smaller value.
size_t Nearest(const std::vector<double>& grid, double v) {
  size_t best = 0;
  for (size_t k = 1; k < grid.size(); ++k) {
    if (std::abs(grid[k] - v) < std::abs(grid[best] - v)) best = k;
  }
  return best;
}

std::string Num(double v) { return fmt::format("{}", v); }

struct CellOutcome {
  ExactCell cell;
  std::vector<LinearModel> intermediate;
};

CellOutcome SolveCell(const CandidatePool& pool, const AuditConfig& config,
                      const EpsilonDelta& target) {
  const Dataset& data = pool.data();
  const LinearModel& baseline = pool.baseline().model;
  const auto started = Clock::now();

  const LevelSetSpec spec = MakeLevelSet(pool, MetricSpec::LogLoss(), target.epsilon);
  const std::vector<int> level_set = FilterLevelSet(pool, spec);
  double bound = config.milp.coef_bound > 0.0 ? config.milp.coef_bound
                                              : DefaultCoefficientBound(baseline);

  // Pool lower bound on the training sample; the box is widened to hold the
  // best member so the solver can never report less.
  const DiscrepancyProblem probe =
      BuildProblem(data, baseline, target.epsilon, target.delta,
                   CoefficientBounds::Symmetric(data.dim(), bound));
  int lb_count = 0;
  int lb_member = 0;
  std::vector<LinearModel> warm;
  warm.reserve(level_set.size());
  for (int k : level_set) {
    const LinearModel& model = pool.members()[k].model;
    const int count = DeviationCount(probe, model.w());
    if (count > lb_count) {
      lb_count = count;
      lb_member = k;
    }
    warm.push_back(model);
  }
  const double lb_norm = pool.members()[lb_member].model.w().cwiseAbs().maxCoeff();
  if (lb_norm > bound) bound = 1.01 * lb_norm;

  const DiscrepancyProblem problem =
      BuildProblem(data, baseline, target.epsilon, target.delta,
                   CoefficientBounds::Symmetric(data.dim(), bound));
  BnbResult result = SolveDiscrepancy(problem, config.milp, warm);

  CellOutcome out;
  ExactCell& c = out.cell;
  c.epsilon = target.epsilon;
  c.delta = target.delta;
  c.status = result.status;
  c.objective = result.objective;
  c.discrepancy = static_cast<double>(result.objective) / data.n();
  c.lower_bound_count = lb_count;
  c.lower_bound = static_cast<double>(lb_count) / data.n();
  c.best_bound = result.best_bound;
  c.gap = result.gap;
  c.node_count = result.node_count;
  c.cut_count = result.cut_count;
  c.harvested = static_cast<int>(result.intermediate_models.size());
  c.coef_bound = bound;
  c.wall_secs = std::chrono::duration<double>(Clock::now() - started).count();
  out.intermediate = std::move(result.intermediate_models);
  Log().info("milp cell eps={} delta={}: {} objective {} (pool bound {})",
             c.epsilon, c.delta, BnbStatusName(c.status), c.objective, lb_count);
  return out;
}

std::vector<CellOutcome> SolveCells(const CandidatePool& pool,
                                    const AuditConfig& config,
                                    const std::vector<EpsilonDelta>& cells) {
  std::vector<std::optional<CellOutcome>> slots(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<size_t> next{0};
  auto worker = [&] {
    for (size_t k = next++; k < cells.size(); k = next++) {
      try {
        slots[k] = SolveCell(pool, config, cells[k]);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const int workers =
      std::max(1, std::min<int>(config.threads, static_cast<int>(cells.size())));
  std::vector<std::thread> threads;
  for (int t = 1; t < workers; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<CellOutcome> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

nlohmann::json MetricBlock(const std::vector<MetricSpec>& metrics,
                           const std::vector<double>& values) {
  nlohmann::json block = nlohmann::json::object();
  for (size_t k = 0; k < metrics.size(); ++k) block[MetricName(metrics[k])] = values[k];
  return block;
}

nlohmann::json SweepJson(const MultiplicityReport& r, const std::string& pool) {
  nlohmann::json cells = nlohmann::json::array();
  for (const MultiplicityCell& c : r.cells) {
    cells.push_back({{"epsilon", c.epsilon},
                     {"delta", c.delta},
                     {"ambiguity", c.ambiguity},
                     {"discrepancy_lower_bound", c.discrepancy_lower_bound},
                     {"discrepancy_model", c.discrepancy_model},
                     {"level_set_size", c.level_set_size}});
  }
  nlohmann::json groups = nlohmann::json::array();
  for (const GroupCell& g : r.group_breakdown) {
    groups.push_back({{"epsilon", g.epsilon},
                      {"delta", g.delta},
                      {"group", g.group},
                      {"size", g.size},
                      {"ambiguity", g.ambiguity},
                      {"discrepancy_lower_bound", g.discrepancy_lower_bound}});
  }
  return {{"metric", MetricName(r.metric)},
          {"pool", pool},
          {"estimate_kind", EstimateKindName(r.estimate_kind)},
          {"epsilon_grid", r.epsilon_grid},
          {"delta_grid", r.delta_grid},
          {"cells", cells},
          {"groups", groups}};
}

std::string HeatTable(const MultiplicityReport& r, bool ambiguity) {
  std::string out = "epsilon";
  for (double d : r.delta_grid) out += ",delta_" + Num(d);
  out += "\n";
  for (size_t e = 0; e < r.epsilon_grid.size(); ++e) {
    out += Num(r.epsilon_grid[e]);
    for (size_t d = 0; d < r.delta_grid.size(); ++d) {
      const MultiplicityCell& c = r.Cell(e, d);
      out += "," + Num(ambiguity ? c.ambiguity : c.discrepancy_lower_bound);
    }
    out += "\n";
  }
  return out;
}

std::string CellsCsv(const AuditReport& report) {
  std::string out =
      "pool,metric,epsilon,delta,ambiguity,discrepancy_lower_bound,"
      "discrepancy_model,level_set_size\n";
  auto emit = [&](const std::vector<MultiplicityReport>& sweeps,
                  const std::string& pool) {
    for (const MultiplicityReport& r : sweeps) {
      for (const MultiplicityCell& c : r.cells) {
        out += fmt::format("{},{},{},{},{},{},{},{}\n", pool, MetricName(r.metric),
                           Num(c.epsilon), Num(c.delta), Num(c.ambiguity),
                           Num(c.discrepancy_lower_bound), c.discrepancy_model,
                           c.level_set_size);
      }
    }
  };
  emit(report.sweeps, "candidate");
  emit(report.sweeps_with_oa, "with_oa");
  return out;
}

std::string CsvField(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::string GroupsCsv(const AuditReport& report) {
  std::string out =
      "pool,metric,epsilon,delta,group,size,ambiguity,discrepancy_lower_bound\n";
  auto emit = [&](const std::vector<MultiplicityReport>& sweeps,
                  const std::string& pool) {
    for (const MultiplicityReport& r : sweeps) {
      for (const GroupCell& g : r.group_breakdown) {
        out += fmt::format("{},{},{},{},{},{},{},{}\n", pool, MetricName(r.metric),
                           Num(g.epsilon), Num(g.delta), CsvField(g.group), g.size,
                           Num(g.ambiguity), Num(g.discrepancy_lower_bound));
      }
    }
  };
  emit(report.sweeps, "candidate");
  emit(report.sweeps_with_oa, "with_oa");
  return out;
}

std::string ExactCsv(const AuditReport& report) {
  std::string out =
      "epsilon,delta,status,objective,discrepancy,lower_bound_count,lower_bound,"
      "best_bound,gap,node_count,cut_count,harvested,coef_bound\n";
  for (const ExactCell& c : report.exact) {
    out += fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{}\n", Num(c.epsilon),
                       Num(c.delta), BnbStatusName(c.status), c.objective,
                       Num(c.discrepancy), c.lower_bound_count, Num(c.lower_bound),
                       Num(c.best_bound), Num(c.gap), c.node_count, c.cut_count,
                       c.harvested, Num(c.coef_bound));
  }
  return out;
}

const MultiplicityReport* LossSweep(const AuditReport& report) {
  for (const MultiplicityReport& r : report.sweeps) {
    if (r.metric.kind == MetricKind::kLogLoss) return &r;
  }
  return nullptr;
}

std::string DeviationCsv(const AuditReport& report) {
  const MultiplicityReport* loss = LossSweep(report);
  std::string out = "example,baseline_risk";
  if (loss) {
    for (double e : loss->epsilon_grid) out += ",max_deviation_eps_" + Num(e);
  } else {
    out += ",max_deviation_eps_" + Num(report.reference.epsilon);
  }
  out += "\n";
  for (int i = 0; i < report.baseline_risk.size(); ++i) {
    out += fmt::format("{},{}", i, Num(report.baseline_risk(i)));
    if (loss) {
      for (const Vector& dev : loss->max_deviation) out += "," + Num(dev(i));
    } else {
      out += "," + Num(report.reference_deviation(i));
    }
    out += "\n";
  }
  return out;
}

std::string ViableRangesCsv(const AuditReport& report) {
  std::string out = "example,baseline_risk,lo,hi,width\n";
  const ViableRange& v = report.reference_ranges;
  for (int i = 0; i < v.lo.size(); ++i) {
    out += fmt::format("{},{},{},{},{}\n", i, Num(report.baseline_risk(i)),
                       Num(v.lo(i)), Num(v.hi(i)), Num(v.hi(i) - v.lo(i)));
  }
  return out;
}

std::string UniquenessCsv(const AuditReport& report) {
  std::string out = "duplicate_count,examples,ambiguous,ambiguity\n";
  for (const UniquenessRow& u : report.uniqueness) {
    out += fmt::format("{},{},{},{}\n", u.duplicate_count, u.examples, u.ambiguous,
                       Num(static_cast<double>(u.ambiguous) / u.examples));
  }
  return out;
}

std::string RangePlotCsv(const std::vector<RangePlotRow>& rows) {
  std::string out = "rank,example,baseline_risk,lo,hi\n";
  for (size_t r = 0; r < rows.size(); ++r) {
    out += fmt::format("{},{},{},{},{}\n", r, rows[r].example, Num(rows[r].baseline),
                       Num(rows[r].lo), Num(rows[r].hi));
  }
  return out;
}

std::string DeviationPlotCsv(const std::vector<DeviationPlotRow>& rows) {
  std::string out = "rank,example,max_deviation\n";
  for (size_t r = 0; r < rows.size(); ++r) {
    out += fmt::format("{},{},{}\n", r, rows[r].example, Num(rows[r].max_deviation));
  }
  return out;
}

// Every output file, name -> contents, except report.json.
std::map<std::string, std::string> Tables(const AuditReport& report) {
  std::map<std::string, std::string> files;
  files["cells.csv"] = CellsCsv(report);
  files["groups.csv"] = GroupsCsv(report);
  files["exact.csv"] = ExactCsv(report);
  files["deviation.csv"] = DeviationCsv(report);
  files["viable_ranges.csv"] = ViableRangesCsv(report);
  files["uniqueness.csv"] = UniquenessCsv(report);
  for (const MultiplicityReport& r : report.sweeps) {
    const std::string name = MetricName(r.metric);
    files["ambiguity_" + name + ".csv"] = HeatTable(r, true);
    files["discrepancy_" + name + ".csv"] = HeatTable(r, false);
  }
  const auto ranges = RangePlotRows(report.baseline_risk, report.reference_ranges.lo,
                                    report.reference_ranges.hi);
  const auto deviations = DeviationPlotRows(report.reference_deviation);
  files["viable_ranges_plot.csv"] = RangePlotCsv(ranges);
  files["max_deviation_plot.csv"] = DeviationPlotCsv(deviations);
  files["viable_ranges.svg"] = ViableRangeSvg(
      ranges, fmt::format("Viable prediction ranges, log-loss epsilon = {}",
                          report.reference.epsilon));
  files["max_deviation.svg"] = MaxDeviationSvg(
      deviations, report.reference.delta,
      fmt::format("Maximum deviation from baseline, log-loss epsilon = {}",
                  report.reference.epsilon));
  return files;
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    throw Error(ErrorCode::kIoError, fmt::format("cannot write {}", path.string()));
  }
}

}  // namespace

void AuditConfig::Validate() const {
  if (csv.has_value() == synthetic.has_value()) {
    ConfigError("exactly one of data.csv and data.synthetic must be given");
  }
  if (csv && csv->label.empty()) ConfigError("data.csv.label is empty");
  if (eval_csv && !csv) ConfigError("eval_csv needs csv training data");
  if (synthetic) synthetic->Validate();
  if (metrics.empty()) ConfigError("metrics is empty");
  std::set<MetricKind> kinds;
  for (const MetricSpec& m : metrics) {
    if (!kinds.insert(m.kind).second) {
      ConfigError(fmt::format("metric {} listed twice", MetricName(m)));
    }
  }
  CheckGrid(epsilon_grid, "epsilon_grid", false);
  CheckGrid(delta_grid, "delta_grid", true);
  if (thresholds.mode == ThresholdMode::kGrid) {
    if (thresholds.grid.empty()) ConfigError("thresholds.grid is empty");
    for (double p : thresholds.grid) {
      if (!(p > 0.0 && p < 1.0)) {
        ConfigError(fmt::format("threshold {} outside (0,1)", p));
      }
    }
  } else if (!(thresholds.delta > 0.0 && thresholds.delta < 1.0)) {
    ConfigError("thresholds.delta must lie in (0,1)");
  }
  train.Validate();
  milp.Validate();
  for (const EpsilonDelta& c : milp_cells) CheckCell(c, "milp cell");
  CheckCell(reference, "reference cell");
  if (ece_bins < 1) ConfigError("ece_bins must be >= 1");
  if (threads < 1) ConfigError("threads must be >= 1");
  if (out_dir.empty()) ConfigError("out_dir is empty");
}

std::vector<EpsilonDelta> AuditConfig::EffectiveMilpCells() const {
  if (!run_milp) return {};
  if (!milp_all_cells) return milp_cells;
  std::vector<EpsilonDelta> cells;
  for (double e : epsilon_grid) {
    for (double d : delta_grid) cells.push_back({e, d});
  }
  return cells;
}

AuditConfig AuditConfigFromJson(const nlohmann::json& j,
                                const std::string& base_dir) {
  if (!j.is_object()) ConfigError("config must be a JSON object");
  AuditConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "data") {
        if (!value.is_object()) ConfigError("data must be an object");
        for (const auto& [dkey, dvalue] : value.items()) {
          if (dkey == "csv") {
            c.csv = CsvFromJson(dvalue, base_dir);
          } else if (dkey == "synthetic") {
            if (dvalue.contains("seed")) {
              ConfigError("data.synthetic.seed is not allowed; use the top-level seed");
            }
            c.synthetic = SyntheticSpecFromJson(dvalue);
          } else if (dkey == "standardize") {
            c.standardize = dvalue.get<bool>();
          } else {
            ConfigError(fmt::format("unknown data key '{}'", dkey));
          }
        }
      } else if (key == "eval_csv") {
        if (!value.is_null()) c.eval_csv = Resolve(value.get<std::string>(), base_dir);
      } else if (key == "metrics") {
        c.metrics.clear();
        for (const auto& m : value) c.metrics.push_back(ParseMetric(m.get<std::string>()));
      } else if (key == "epsilon_grid") {
        c.epsilon_grid = value.get<std::vector<double>>();
      } else if (key == "delta_grid") {
        c.delta_grid = value.get<std::vector<double>>();
      } else if (key == "thresholds") {
        c.thresholds = ThresholdsFromJson(value);
      } else if (key == "train") {
        c.train = TrainConfigFromJson(value);
      } else if (key == "milp") {
        c.milp = MilpConfigFromJson(value);
      } else if (key == "run_milp") {
        c.run_milp = value.get<bool>();
      } else if (key == "milp_all_cells") {
        c.milp_all_cells = value.get<bool>();
      } else if (key == "milp_cells") {
        c.milp_cells.clear();
        for (const auto& cell : value) c.milp_cells.push_back(CellFromJson(cell, "milp cell"));
      } else if (key == "reference") {
        c.reference = CellFromJson(value, "reference");
      } else if (key == "ece_bins") {
        c.ece_bins = value.get<int>();
      } else if (key == "auc_tie_credit") {
        c.auc_tie_credit = value.get<bool>();
      } else if (key == "threads") {
        c.threads = value.get<int>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "out_dir") {
        c.out_dir = Resolve(value.get<std::string>(), base_dir);
      } else if (key == "include_timing") {
        c.include_timing = value.get<bool>();
      } else {
        ConfigError(fmt::format("unknown config key '{}'", key));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    ConfigError(e.what());
  }
  c.Validate();
  return c;
}

nlohmann::json ToJson(const AuditConfig& c) {
  nlohmann::json data = {{"standardize", c.standardize}};
  if (c.csv) {
    data["csv"] = {{"path", c.csv->path},
                   {"label", c.csv->label},
                   {"group", c.csv->group ? nlohmann::json(*c.csv->group)
                                          : nlohmann::json(nullptr)},
                   {"positive_label", c.csv->positive_label}};
  }
  if (c.synthetic) {
    nlohmann::json s = ToJson(*c.synthetic);
    s.erase("seed");
    data["synthetic"] = s;
  }
  nlohmann::json metrics = nlohmann::json::array();
  for (const MetricSpec& m : c.metrics) metrics.push_back(MetricName(m));
  nlohmann::json thresholds = {
      {"mode", c.thresholds.mode == ThresholdMode::kGrid ? "grid" : "aligned"}};
  if (c.thresholds.mode == ThresholdMode::kGrid) {
    thresholds["grid"] = c.thresholds.grid;
  } else {
    thresholds["delta"] = c.thresholds.delta;
  }
  nlohmann::json cells = nlohmann::json::array();
  for (const EpsilonDelta& cell : c.milp_cells) cells.push_back({cell.epsilon, cell.delta});
  // out_dir and threads are absent: neither changes any result.
  return {{"data", data},
          {"eval_csv", c.eval_csv ? nlohmann::json(*c.eval_csv) : nlohmann::json(nullptr)},
          {"metrics", metrics},
          {"epsilon_grid", c.epsilon_grid},
          {"delta_grid", c.delta_grid},
          {"thresholds", thresholds},
          {"train", ToJson(c.train)},
          {"milp", ToJson(c.milp)},
          {"run_milp", c.run_milp},
          {"milp_all_cells", c.milp_all_cells},
          {"milp_cells", cells},
          {"reference", {c.reference.epsilon, c.reference.delta}},
          {"ece_bins", c.ece_bins},
          {"auc_tie_credit", c.auc_tie_credit},
          {"seed", c.seed},
          {"include_timing", c.include_timing}};
}

std::string ConfigHash(const AuditConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : ToJson(config).dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

AuditData LoadAuditData(const AuditConfig& config) {
  if (config.synthetic) {
    SyntheticSpec spec = *config.synthetic;
    spec.seed = config.seed;
    Dataset data = GenerateSynthetic(spec);
    if (config.standardize) data = Standardize(data);
    return {std::move(data), std::nullopt};
  }
  const CsvSource& csv = *config.csv;
  Dataset train = LoadCsv(csv.path, csv.label, csv.group, csv.positive_label);
  std::optional<Dataset> eval;
  if (config.eval_csv) {
    eval = LoadCsv(*config.eval_csv, csv.label, csv.group, csv.positive_label);
    if (eval->feature_names() != train.feature_names()) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "eval_csv features differ from the training features");
    }
  }
  if (config.standardize) {
    const Standardizer s = Standardizer::Fit(train);
    train = s.Apply(train);
    if (eval) eval = s.Apply(*eval);
  }
  return {std::move(train), std::move(eval)};
}

bool AuditReport::partial() const {
  if (!failures.empty()) return true;
  return std::any_of(exact.begin(), exact.end(), [](const ExactCell& c) {
    return c.status != BnbStatus::kOptimal;
  });
}

AuditReport RunAudit(const AuditConfig& config) {
  config.Validate();
  const auto started = Clock::now();
  AuditData data = LoadAuditData(config);

  AuditReport report;
  report.config = config;
  report.n_train = data.train.n();
  report.n_eval = data.eval ? data.eval->n() : data.train.n();
  report.feature_names = data.train.feature_names();

  report.baseline = TrainBaseline(data.train, config.train).model;
  std::vector<MetricSpec> metrics;
  for (const MetricSpec& m : config.metrics) metrics.push_back(Configured(m, config));
  for (const MetricSpec& m : metrics) {
    report.train_metrics.push_back(Evaluate(report.baseline, data.train, m));
    if (data.eval) report.eval_metrics.push_back(Evaluate(report.baseline, *data.eval, m));
  }

  PoolOptions options;
  options.thresholds = config.thresholds;
  options.train = config.train;
  options.threads = config.threads;
  options.ece_bins = config.ece_bins;
  options.auc_tie_credit = config.auc_tie_credit;
  const CandidatePool pool = BuildPool(data.train, report.baseline, options, data.eval);
  report.pool_size = static_cast<int>(pool.size());
  report.failures = pool.failures();
  Log().info("pool: {} members, {} failures", pool.size(), pool.failures().size());

  for (const MetricSpec& m : metrics) {
    report.sweeps.push_back(Sweep(pool, m, config.epsilon_grid, config.delta_grid));
  }

  const std::vector<EpsilonDelta> cells = config.EffectiveMilpCells();
  std::vector<CellOutcome> outcomes = SolveCells(pool, config, cells);
  std::vector<LinearModel> harvest;
  for (CellOutcome& o : outcomes) {
    report.exact.push_back(o.cell);
    for (LinearModel& m : o.intermediate) harvest.push_back(std::move(m));
  }
  if (!harvest.empty()) {
    BnbResult combined;
    combined.intermediate_models = std::move(harvest);
    const CandidatePool enlarged = HarvestCandidates(combined, pool);
    for (const MetricSpec& m : metrics) {
      report.sweeps_with_oa.push_back(
          Sweep(enlarged, m, config.epsilon_grid, config.delta_grid));
    }
  }

  report.reference = {config.epsilon_grid[Nearest(config.epsilon_grid, config.reference.epsilon)],
                      config.delta_grid[Nearest(config.delta_grid, config.reference.delta)]};
  const LevelSetSpec reference_spec = MakeLevelSet(
      pool, Configured(MetricSpec::LogLoss(), config), report.reference.epsilon);
  report.reference_ranges = ViableRanges(pool, reference_spec);
  const AmbiguityResult ambiguity =
      Ambiguity(pool, reference_spec, report.reference.delta);
  report.reference_deviation = ambiguity.max_deviation;
  report.baseline_risk = pool.baseline().predictions;

  std::map<int, UniquenessRow> by_count;
  const std::vector<int> duplicates = DuplicateCounts(pool.eval_data());
  for (size_t i = 0; i < duplicates.size(); ++i) {
    UniquenessRow& row = by_count[duplicates[i]];
    row.duplicate_count = duplicates[i];
    ++row.examples;
    if (ambiguity.ambiguous[i]) ++row.ambiguous;
  }
  for (const auto& [count, row] : by_count) report.uniqueness.push_back(row);

  report.wall_secs = std::chrono::duration<double>(Clock::now() - started).count();
  return report;
}

namespace {

std::vector<std::string> OutputNames(const AuditReport& report) {
  std::vector<std::string> names;
  for (const auto& [name, text] : Tables(report)) names.push_back(name);
  names.push_back("report.json");
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

nlohmann::json ToJson(const AuditReport& report) {
  const AuditConfig& config = report.config;
  std::vector<MetricSpec> metrics;
  for (const MetricSpec& m : config.metrics) metrics.push_back(Configured(m, config));

  nlohmann::json failures = nlohmann::json::array();
  for (const TrainingFailure& f : report.failures) {
    failures.push_back({{"example_index", f.example_index},
                        {"threshold", f.threshold},
                        {"message", f.message}});
  }
  nlohmann::json multiplicity = nlohmann::json::array();
  for (const auto& r : report.sweeps) multiplicity.push_back(SweepJson(r, "candidate"));
  for (const auto& r : report.sweeps_with_oa) multiplicity.push_back(SweepJson(r, "with_oa"));

  nlohmann::json exact = nlohmann::json::array();
  for (const ExactCell& c : report.exact) {
    nlohmann::json cell = {{"epsilon", c.epsilon},
                           {"delta", c.delta},
                           {"status", BnbStatusName(c.status)},
                           {"objective", c.objective},
                           {"discrepancy", c.discrepancy},
                           {"lower_bound_count", c.lower_bound_count},
                           {"discrepancy_lower_bound", c.lower_bound},
                           {"best_bound", c.best_bound},
                           {"gap", c.gap},
                           {"node_count", c.node_count},
                           {"cut_count", c.cut_count},
                           {"harvested", c.harvested},
                           {"coef_bound", c.coef_bound}};
    if (config.include_timing) cell["wall_secs"] = c.wall_secs;
    exact.push_back(cell);
  }

  const Vector widths = report.reference_ranges.hi - report.reference_ranges.lo;
  std::vector<double> sorted(widths.data(), widths.data() + widths.size());
  std::sort(sorted.begin(), sorted.end());
  const double median =
      sorted.empty() ? 0.0
                     : (sorted.size() % 2 ? sorted[sorted.size() / 2]
                                          : 0.5 * (sorted[sorted.size() / 2 - 1] +
                                                   sorted[sorted.size() / 2]));
  const long wide = std::count_if(sorted.begin(), sorted.end(), [&](double w) {
    return w >= report.reference.delta - kDeviationSlack;
  });

  nlohmann::json uniqueness = nlohmann::json::array();
  for (const UniquenessRow& u : report.uniqueness) {
    uniqueness.push_back({{"duplicate_count", u.duplicate_count},
                          {"examples", u.examples},
                          {"ambiguous", u.ambiguous},
                          {"ambiguity", static_cast<double>(u.ambiguous) / u.examples}});
  }

  nlohmann::json groups = nlohmann::json::array();
  const MultiplicityReport& first = report.sweeps.front();
  std::vector<std::string> seen;
  for (const GroupCell& g : first.group_breakdown) {
    if (std::find(seen.begin(), seen.end(), g.group) == seen.end()) {
      seen.push_back(g.group);
      groups.push_back({{"group", g.group}, {"size", g.size}});
    }
  }

  nlohmann::json out = {
      {"schema_version", kReportSchemaVersion},
      {"tool", {{"name", "mpaudit"}, {"version", kToolVersion}}},
      {"config_hash", ConfigHash(config)},
      {"config", ToJson(config)},
      {"status", report.partial() ? "partial" : "ok"},
      {"data",
       {{"n_train", report.n_train},
        {"n_eval", report.n_eval},
        {"separate_eval", config.eval_csv.has_value()},
        {"features", report.feature_names},
        {"groups", groups}}},
      {"baseline",
       {{"model", ModelToJson(report.baseline, report.feature_names)},
        {"metrics",
         {{"train", MetricBlock(metrics, report.train_metrics)},
          {"eval", report.eval_metrics.empty()
                       ? nlohmann::json(nullptr)
                       : MetricBlock(metrics, report.eval_metrics)}}}}},
      {"pool",
       {{"size", report.pool_size},
        {"training_failures", failures}}},
      {"multiplicity", multiplicity},
      {"exact_discrepancy", exact},
      {"viable_ranges",
       {{"metric", "log_loss"},
        {"epsilon", report.reference.epsilon},
        {"estimate_kind", EstimateKindName(report.reference_ranges.estimate_kind)},
        {"mean_width", widths.size() ? widths.mean() : 0.0},
        {"median_width", median},
        {"max_width", widths.size() ? widths.maxCoeff() : 0.0},
        {"width_at_least_delta", wide},
        {"delta", report.reference.delta}}},
      {"uniqueness",
       {{"metric", "log_loss"},
        {"epsilon", report.reference.epsilon},
        {"delta", report.reference.delta},
        {"rows", uniqueness}}},
      {"files", OutputNames(report)},
  };
  if (config.include_timing) out["timing"] = {{"wall_secs", report.wall_secs}};
  return out;
}

std::vector<std::string> WriteAuditOutputs(const AuditReport& report) {
  const fs::path dir(report.config.out_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIoError,
                fmt::format("cannot create {}: {}", dir.string(), ec.message()));
  }
  for (const auto& [name, text] : Tables(report)) WriteText(dir / name, text);
  WriteText(dir / "report.json", ToJson(report).dump(2) + "\n");
  return OutputNames(report);
}

}  // namespace mpaudit
