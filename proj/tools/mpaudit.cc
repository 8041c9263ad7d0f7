// mpaudit command-line front end.
//
// Exit codes: 0 ok, 2 configuration or input error, 3 solver failure,
// 4 audit finished with recorded limits or candidate failures.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "json.hpp"
#include "mpaudit/audit.h"
#include "mpaudit/discrepancy.h"
#include "mpaudit/error.h"
#include "mpaudit/log.h"
#include "mpaudit/milp.h"
#include "mpaudit/replicate.h"
#include "mpaudit/trainer.h"

namespace {

namespace fs = std::filesystem;
using mpaudit::Error;
using mpaudit::ErrorCode;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;
constexpr int kExitPartial = 4;

struct GlobalFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string eval_csv;
  std::optional<int> threads;
};

int ExitCodeFor(ErrorCode code) {
  switch (code) {
    case ErrorCode::kNoConvergence:
    case ErrorCode::kNumericalFailure:
    case ErrorCode::kUnbounded:
    case ErrorCode::kTimeLimit:
    case ErrorCode::kZeroFeatureVector:
    case ErrorCode::kInvalidBounds:
      return kExitSolver;
    default:
      return kExitConfig;
  }
}

std::string Absolute(const std::string& path) {
  return fs::absolute(fs::path(path)).lexically_normal().string();
}

nlohmann::json ReadJson(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, fmt::format("cannot open {}", path));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, fmt::format("{}: {}", path, e.what()));
  }
}

// Config file with command-line overrides applied. Paths inside the file are
// relative to its directory; paths on the command line to the working one.
mpaudit::AuditConfig LoadConfig(const GlobalFlags& flags) {
  if (flags.config.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "--config is required");
  }
  const std::string path = Absolute(flags.config);
  mpaudit::AuditConfig config = mpaudit::AuditConfigFromJson(
      ReadJson(path), fs::path(path).parent_path().string());
  if (flags.seed) config.seed = *flags.seed;
  if (flags.threads) config.threads = *flags.threads;
  if (!flags.out_dir.empty()) config.out_dir = Absolute(flags.out_dir);
  if (!flags.eval_csv.empty()) config.eval_csv = Absolute(flags.eval_csv);
  config.Validate();
  return config;
}

void WriteFile(const fs::path& path, const std::string& text) {
  std::error_code ec;
  fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    throw Error(ErrorCode::kIoError, fmt::format("cannot write {}", path.string()));
  }
}

nlohmann::json MetricsBlock(const mpaudit::LinearModel& model,
                            const mpaudit::Dataset& data,
                            const mpaudit::AuditConfig& config) {
  return {{"loss", mpaudit::LogLoss(model, data)},
          {"auc", mpaudit::Auc(model, data, config.auc_tie_credit)},
          {"ece", mpaudit::Ece(model, data, config.ece_bins)},
          {"n", data.n()}};
}

int RunTrain(const GlobalFlags& flags) {
  const mpaudit::AuditConfig config = LoadConfig(flags);
  const mpaudit::AuditData data = mpaudit::LoadAuditData(config);
  const mpaudit::TrainResult fit = mpaudit::TrainBaseline(data.train, config.train);
  nlohmann::json metrics = {
      {"train", MetricsBlock(fit.model, data.train, config)},
      {"eval", data.eval ? MetricsBlock(fit.model, *data.eval, config)
                         : nlohmann::json(nullptr)}};
  nlohmann::json model = mpaudit::ModelToJson(fit.model, data.train.feature_names());
  const fs::path dir(config.out_dir);
  WriteFile(dir / "model.json", model.dump(2) + "\n");
  WriteFile(dir / "metrics.json", metrics.dump(2) + "\n");
  std::cout << metrics.dump(2) << "\n";
  return kExitOk;
}

int RunAudit(const GlobalFlags& flags) {
  const mpaudit::AuditConfig config = LoadConfig(flags);
  const mpaudit::AuditReport report = mpaudit::RunAudit(config);
  const std::vector<std::string> files = mpaudit::WriteAuditOutputs(report);
  for (const auto& r : report.sweeps) {
    const size_t e = std::find(r.epsilon_grid.begin(), r.epsilon_grid.end(),
                               report.reference.epsilon) - r.epsilon_grid.begin();
    const size_t d = std::find(r.delta_grid.begin(), r.delta_grid.end(),
                               report.reference.delta) - r.delta_grid.begin();
    const auto& cell = r.Cell(e, d);
    fmt::print("{:<10} eps={} delta={}: ambiguity {:.4f}, discrepancy >= {:.4f}\n",
               mpaudit::MetricName(r.metric), cell.epsilon, cell.delta,
               cell.ambiguity, cell.discrepancy_lower_bound);
  }
  for (const auto& c : report.exact) {
    fmt::print("exact      eps={} delta={}: {} discrepancy {:.4f} ({} of {}), "
               "pool bound {}\n",
               c.epsilon, c.delta, mpaudit::BnbStatusName(c.status), c.discrepancy,
               c.objective, report.n_train, c.lower_bound_count);
  }
  fmt::print("{} files written to {}\n", files.size(), config.out_dir);
  return report.partial() ? kExitPartial : kExitOk;
}

std::vector<std::uint64_t> ParseSeeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream in(text);
  std::string part;
  try {
    while (std::getline(in, part, ',')) {
      const size_t dash = part.find('-');
      if (dash == std::string::npos) {
        seeds.push_back(std::stoull(part));
        continue;
      }
      const std::uint64_t lo = std::stoull(part.substr(0, dash));
      const std::uint64_t hi = std::stoull(part.substr(dash + 1));
      if (hi < lo) throw std::invalid_argument(part);
      for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    }
  } catch (const std::logic_error&) {
    throw Error(ErrorCode::kInvalidConfig,
                fmt::format("seeds '{}' is not a list like 0-9 or 1,4,7", text));
  }
  if (seeds.empty()) throw Error(ErrorCode::kInvalidConfig, "no seeds given");
  return seeds;
}

struct ReplicateFlags {
  std::string study = "all";
  std::string seeds = "0-9";
  double epsilon = 0.05;
  double delta = 0.2;
};

int RunReplicate(const GlobalFlags& flags, const ReplicateFlags& rf) {
  mpaudit::ReplicateOptions options;
  options.epsilon = rf.epsilon;
  options.delta = rf.delta;
  std::string out_dir = "mpaudit_out";
  if (!flags.config.empty()) {
    const mpaudit::AuditConfig config = LoadConfig(flags);
    options.pool.thresholds = config.thresholds;
    options.pool.train = config.train;
    options.threads = config.threads;
    out_dir = config.out_dir;
  }
  if (flags.threads) options.threads = *flags.threads;
  if (!flags.out_dir.empty()) out_dir = Absolute(flags.out_dir);
  if (!(options.epsilon > 0.0) || !(options.delta > 0.0 && options.delta < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "need epsilon > 0 and delta in (0,1)");
  }
  const std::vector<std::uint64_t> seeds = ParseSeeds(rf.seeds);
  std::vector<mpaudit::Study> studies;
  if (rf.study == "all") {
    studies = {mpaudit::Study::kSeparability, mpaudit::Study::kOutliers,
               mpaudit::Study::kRatio};
  } else {
    studies = {mpaudit::ParseStudy(rf.study)};
  }
  bool all_hold = true;
  for (mpaudit::Study study : studies) {
    const mpaudit::StudyReport report = mpaudit::RunStudy(study, seeds, options);
    nlohmann::json j = mpaudit::ToJson(report);
    j["epsilon"] = options.epsilon;
    j["delta"] = options.delta;
    j["seeds"] = seeds;
    const std::string name = mpaudit::StudyName(study);
    WriteFile(fs::path(out_dir) / fmt::format("replicate_{}.json", name),
              j.dump(2) + "\n");
    for (const auto& c : report.conditions) {
      fmt::print("{:<12} {:<13} mean ambiguity {:.4f}\n", name, c.name,
                 c.mean_ambiguity);
    }
    for (const auto& v : report.verdicts) {
      fmt::print("{:<12} {:<40} {}\n", name, v.name, v.holds ? "holds" : "fails");
      all_hold = all_hold && v.holds;
    }
  }
  fmt::print("verdicts: {}\n", all_hold ? "all hold" : "some fail");
  return kExitOk;
}

struct ExportFlags {
  std::optional<double> epsilon;
  std::optional<double> delta;
  bool with_cuts = false;
  std::string output;
};

int RunExportMps(const GlobalFlags& flags, const ExportFlags& ef) {
  const mpaudit::AuditConfig config = LoadConfig(flags);
  const double epsilon = ef.epsilon.value_or(config.milp_cells.empty()
                                                 ? config.reference.epsilon
                                                 : config.milp_cells.front().epsilon);
  const double delta = ef.delta.value_or(config.milp_cells.empty()
                                             ? config.reference.delta
                                             : config.milp_cells.front().delta);
  const mpaudit::AuditData data = mpaudit::LoadAuditData(config);
  const mpaudit::LinearModel baseline =
      mpaudit::TrainBaseline(data.train, config.train).model;
  const double bound = config.milp.coef_bound > 0.0
                           ? config.milp.coef_bound
                           : mpaudit::DefaultCoefficientBound(baseline);
  mpaudit::DiscrepancyProblem problem = mpaudit::BuildProblem(
      data.train, baseline, epsilon, delta,
      mpaudit::CoefficientBounds::Symmetric(data.train.dim(), bound));
  if (ef.with_cuts) {
    const mpaudit::BnbResult result = mpaudit::SolveDiscrepancy(problem, config.milp);
    problem.cuts = result.cuts;
  }
  const mpaudit::MilpModel model = mpaudit::BuildMilpModel(problem);
  const std::string path =
      ef.output.empty()
          ? (fs::path(config.out_dir) /
             fmt::format("discrepancy_eps{}_delta{}.mps", epsilon, delta))
                .string()
          : Absolute(ef.output);
  std::error_code ec;
  fs::create_directories(fs::path(path).parent_path(), ec);
  mpaudit::WriteMps(model, path);
  fmt::print("{} ({} loss cuts)\n", path, problem.cuts.size());
  return kExitOk;
}

struct SynthFlags {
  std::string kind;
  std::optional<double> sigma;
  std::optional<int> n_total;
  std::optional<double> outlier_margin;
  std::optional<double> group_ratio;
  std::string output;
};

int RunGenSynth(const GlobalFlags& flags, const SynthFlags& sf) {
  mpaudit::SyntheticSpec spec;
  spec.kind = mpaudit::ParseSyntheticKind(sf.kind);
  if (sf.sigma) spec.sigma = *sf.sigma;
  if (sf.n_total) spec.n_total = *sf.n_total;
  if (sf.outlier_margin) spec.outlier_margin = *sf.outlier_margin;
  if (sf.group_ratio) spec.group_ratio = *sf.group_ratio;
  spec.seed = flags.seed.value_or(0);
  spec.Validate();
  const mpaudit::Dataset data = mpaudit::GenerateSynthetic(spec);
  std::string path = sf.output;
  if (path.empty()) {
    const std::string dir = flags.out_dir.empty() ? "mpaudit_out" : flags.out_dir;
    path = (fs::path(dir) / fmt::format("{}_seed{}.csv",
                                        mpaudit::SyntheticKindName(spec.kind),
                                        spec.seed))
               .string();
  }
  std::error_code ec;
  fs::create_directories(fs::absolute(fs::path(path)).parent_path(), ec);
  mpaudit::WriteCsv(data, path);
  fmt::print("{} ({} rows)\n", path, data.n());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predictive multiplicity audits for logistic regression"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags flags;
  app.add_option("--config", flags.config, "JSON configuration file");
  app.add_option("--seed", flags.seed, "Seed for synthetic data");
  app.add_option("--out-dir", flags.out_dir, "Output directory");
  app.add_option("--eval-csv", flags.eval_csv, "Separate evaluation sample");
  app.add_option("--threads", flags.threads, "Worker threads")->check(CLI::PositiveNumber);

  auto* train = app.add_subcommand("train", "Fit the baseline model");
  auto* audit = app.add_subcommand("audit", "Run the full multiplicity audit");

  ReplicateFlags rf;
  auto* replicate =
      app.add_subcommand("replicate", "Paired synthetic studies over seeds");
  replicate->add_option("--study", rf.study, "separability, outliers, ratio or all")
      ->capture_default_str();
  replicate->add_option("--seeds", rf.seeds, "Seed list such as 0-9 or 1,5,9")
      ->capture_default_str();
  replicate->add_option("--epsilon", rf.epsilon, "Loss level-set tolerance")
      ->capture_default_str();
  replicate->add_option("--delta", rf.delta, "Deviation threshold")
      ->capture_default_str();

  ExportFlags ef;
  auto* export_mps =
      app.add_subcommand("export-mps", "Write the discrepancy MILP in MPS format");
  export_mps->add_option("--epsilon", ef.epsilon, "Loss tolerance");
  export_mps->add_option("--delta", ef.delta, "Deviation threshold");
  export_mps->add_flag("--with-cuts", ef.with_cuts,
                       "Solve first and include every accumulated loss cut");
  export_mps->add_option("--output", ef.output, "Output path");

  SynthFlags sf;
  auto* gen_synth = app.add_subcommand("gen-synth", "Write a synthetic study dataset");
  gen_synth->add_option("--kind", sf.kind, "separability, outliers or majority_minority")
      ->required();
  gen_synth->add_option("--sigma", sf.sigma, "Cluster standard deviation");
  gen_synth->add_option("--n", sf.n_total, "Total rows");
  gen_synth->add_option("--outlier-margin", sf.outlier_margin, "Outlier margin");
  gen_synth->add_option("--ratio", sf.group_ratio, "Majority to minority ratio");
  gen_synth->add_option("--output", sf.output, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return RunTrain(flags);
    if (*audit) return RunAudit(flags);
    if (*replicate) return RunReplicate(flags, rf);
    if (*export_mps) return RunExportMps(flags, ef);
    if (*gen_synth) return RunGenSynth(flags, sf);
  } catch (const Error& e) {
    std::cerr << "mpaudit: " << e.what() << "\n";
    return ExitCodeFor(e.code());
  } catch (const std::exception& e) {
    std::cerr << "mpaudit: " << e.what() << "\n";
    return kExitSolver;
  }
  return kExitOk;
}
