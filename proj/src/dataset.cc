#include "mpaudit/dataset.h"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "mpaudit/error.h"

namespace mpaudit {
namespace {

std::string_view Trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

// Splits one CSV record. Double quotes group a field and "" escapes a quote.
std::vector<std::string> SplitCsvLine(std::string_view line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back(Trim(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.emplace_back(Trim(field));
  return fields;
}

std::optional<double> ParseNumber(std::string_view s) {
  s = Trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(value)) {
    return std::nullopt;
  }
  return value;
}

}  // namespace

Dataset::Dataset(Matrix x, Vector y, std::vector<std::string> feature_names,
                 std::vector<std::string> groups)
    : x_(std::move(x)),
      y_(std::move(y)),
      feature_names_(std::move(feature_names)),
      groups_(std::move(groups)) {
  if (x_.rows() != y_.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("{} feature rows but {} labels", x_.rows(),
                            y_.size()));
  }
  if (x_.cols() < 1 ||
      static_cast<Eigen::Index>(feature_names_.size()) != x_.cols()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "feature_names must name every column including the intercept");
  }
  if (!groups_.empty() &&
      static_cast<Eigen::Index>(groups_.size()) != x_.rows()) {
    throw Error(ErrorCode::kDimensionMismatch, "groups must have one entry per row");
  }
  for (Eigen::Index i = 0; i < x_.rows(); ++i) {
    if (x_(i, 0) != 1.0) {
      throw Error(ErrorCode::kInvalidSpec,
                  fmt::format("row {}: intercept column must be 1", i));
    }
    for (Eigen::Index j = 0; j < x_.cols(); ++j) {
      if (!std::isfinite(x_(i, j))) {
        throw Error(ErrorCode::kNonNumericFeature,
                    fmt::format("row {}, column '{}' is not finite", i,
                                feature_names_[j]));
      }
    }
    if (y_(i) == 1.0) {
      ++n_pos_;
    } else if (y_(i) == -1.0) {
      ++n_neg_;
    } else {
      throw Error(ErrorCode::kDegenerateLabels,
                  fmt::format("row {}: label {} is not -1/+1", i, y_(i)));
    }
  }
  if (n_pos_ == 0 || n_neg_ == 0) {
    throw Error(ErrorCode::kDegenerateLabels,
                fmt::format("need both classes, got {} positive and {} negative",
                            n_pos_, n_neg_));
  }
}

std::vector<std::string> Dataset::GroupLevels() const {
  std::vector<std::string> levels;
  for (const std::string& g : groups_) {
    if (std::find(levels.begin(), levels.end(), g) == levels.end()) {
      levels.push_back(g);
    }
  }
  return levels;
}

Dataset Dataset::Subset(const std::vector<int>& rows) const {
  Matrix x(rows.size(), x_.cols());
  Vector y(rows.size());
  std::vector<std::string> groups;
  for (size_t k = 0; k < rows.size(); ++k) {
    x.row(k) = x_.row(rows[k]);
    y(k) = y_(rows[k]);
    if (has_groups()) groups.push_back(groups_[rows[k]]);
  }
  return Dataset(std::move(x), std::move(y), feature_names_, std::move(groups));
}

Dataset LoadCsv(const std::string& path, const std::string& label_column,
                const std::optional<std::string>& group_column,
                const std::string& positive_label) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorCode::kParseError, path + ": missing header row");
  }
  // Strip a UTF-8 byte order mark.
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
  const std::vector<std::string> header = SplitCsvLine(line);

  auto find_column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw Error(ErrorCode::kMissingColumn,
                  fmt::format("column '{}' not found in {}", name, path));
    }
    return static_cast<int>(it - header.begin());
  };
  const int label_col = find_column(label_column);
  const int group_col = group_column ? find_column(*group_column) : -1;

  std::vector<int> feature_cols;
  std::vector<std::string> names = {kInterceptName};
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    if (c == label_col || c == group_col) continue;
    feature_cols.push_back(c);
    names.push_back(header[c]);
  }

  std::vector<std::vector<double>> rows;
  std::vector<std::string> labels;
  std::vector<std::string> groups;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    const std::vector<std::string> fields = SplitCsvLine(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::kParseError,
                  fmt::format("{}:{}: expected {} fields, found {}", path,
                              line_no, header.size(), fields.size()));
    }
    std::vector<double> row = {1.0};
    for (int c : feature_cols) {
      const std::optional<double> v = ParseNumber(fields[c]);
      if (!v) {
        throw Error(ErrorCode::kNonNumericFeature,
                    fmt::format("{}: row {} column '{}' has value '{}'", path,
                                line_no, header[c], fields[c]));
      }
      row.push_back(*v);
    }
    rows.push_back(std::move(row));
    labels.push_back(fields[label_col]);
    if (group_col >= 0) groups.push_back(fields[group_col]);
  }

  std::vector<std::string> distinct = labels;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() != 2) {
    throw Error(ErrorCode::kDegenerateLabels,
                fmt::format("label column '{}' has {} distinct values, need 2",
                            label_column, distinct.size()));
  }
  if (std::find(distinct.begin(), distinct.end(), positive_label) ==
      distinct.end()) {
    throw Error(ErrorCode::kDegenerateLabels,
                fmt::format("positive label '{}' does not occur in column '{}'",
                            positive_label, label_column));
  }

  Matrix x(rows.size(), names.size());
  Vector y(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < names.size(); ++j) x(i, j) = rows[i][j];
    y(i) = labels[i] == positive_label ? 1.0 : -1.0;
  }
  return Dataset(std::move(x), std::move(y), std::move(names),
                 std::move(groups));
}

Dataset Concatenate(const Dataset& a, const Dataset& b) {
  if (a.feature_names() != b.feature_names()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "cannot concatenate datasets with different features");
  }
  if (a.has_groups() != b.has_groups()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "cannot concatenate grouped and ungrouped datasets");
  }
  Matrix x(a.n() + b.n(), a.dim());
  x << a.x(), b.x();
  Vector y(a.n() + b.n());
  y << a.y(), b.y();
  std::vector<std::string> groups = a.groups();
  groups.insert(groups.end(), b.groups().begin(), b.groups().end());
  return Dataset(std::move(x), std::move(y), a.feature_names(),
                 std::move(groups));
}

Standardizer Standardizer::Fit(const Dataset& data) {
  Standardizer s{Vector::Zero(data.dim()), Vector::Ones(data.dim())};
  for (int j = 1; j < data.dim(); ++j) {
    s.mean(j) = data.x().col(j).mean();
    const double sd = std::sqrt(
        (data.x().col(j).array() - s.mean(j)).square().sum() / data.n());
    if (sd > 0.0) s.scale(j) = sd;
  }
  return s;
}

Dataset Standardizer::Apply(const Dataset& data) const {
  if (data.dim() != mean.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("standardizer fitted on {} columns, data has {}",
                            mean.size(), data.dim()));
  }
  Matrix x = data.x();
  for (int j = 1; j < data.dim(); ++j) {
    x.col(j).array() -= mean(j);
    x.col(j) /= scale(j);
  }
  return Dataset(std::move(x), data.y(), data.feature_names(), data.groups());
}

Dataset Standardize(const Dataset& data) {
  return Standardizer::Fit(data).Apply(data);
}

std::pair<Dataset, Dataset> ShuffleSplit(const Dataset& data,
                                         double test_fraction,
                                         std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw Error(ErrorCode::kInvalidSpec, "test_fraction must lie in (0,1)");
  }
  std::vector<int> order(data.n());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const int n_test = static_cast<int>(std::lround(test_fraction * data.n()));
  std::vector<int> test(order.begin(), order.begin() + n_test);
  std::vector<int> train(order.begin() + n_test, order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {data.Subset(train), data.Subset(test)};
}

std::vector<int> DuplicateCounts(const Dataset& data) {
  std::map<std::vector<std::uint64_t>, int> counts;
  std::vector<std::vector<std::uint64_t>> keys(data.n());
  for (int i = 0; i < data.n(); ++i) {
    keys[i].reserve(data.dim());
    for (int j = 0; j < data.dim(); ++j) {
      keys[i].push_back(std::bit_cast<std::uint64_t>(data.x()(i, j)));
    }
    ++counts[keys[i]];
  }
  std::vector<int> out(data.n());
  for (int i = 0; i < data.n(); ++i) out[i] = counts[keys[i]];
  return out;
}

// --- Synthetic data -------------------------------------------------------

std::string_view SyntheticKindName(SyntheticKind kind) {
  switch (kind) {
    case SyntheticKind::kSeparability:
      return "separability";
    case SyntheticKind::kOutliers:
      return "outliers";
    case SyntheticKind::kMajorityMinority:
      return "majority_minority";
  }
  return "separability";
}

SyntheticKind ParseSyntheticKind(std::string_view name) {
  if (name == "separability") return SyntheticKind::kSeparability;
  if (name == "outliers") return SyntheticKind::kOutliers;
  if (name == "majority_minority") return SyntheticKind::kMajorityMinority;
  throw Error(ErrorCode::kInvalidSpec,
              fmt::format("unknown synthetic kind '{}'", name));
}

int SyntheticSpec::EffectiveTotal() const {
  if (n_total > 0) return n_total;
  switch (kind) {
    case SyntheticKind::kSeparability:
      return 200;
    case SyntheticKind::kOutliers:
      return 320;
    case SyntheticKind::kMajorityMinority:
      return 300;
  }
  return 200;
}

void SyntheticSpec::Validate() const {
  if (!(sigma > 0.0)) throw Error(ErrorCode::kInvalidSpec, "sigma must be > 0");
  if (n_total != 0 && n_total < 4) {
    throw Error(ErrorCode::kInvalidSpec, "n_total must be >= 4");
  }
  if (!(group_ratio >= 1.0)) {
    throw Error(ErrorCode::kInvalidSpec, "group_ratio must be >= 1");
  }
  if (!std::isfinite(outlier_margin) || !std::isfinite(center_offset)) {
    throw Error(ErrorCode::kInvalidSpec, "geometry must be finite");
  }
  if (kind == SyntheticKind::kOutliers &&
      (outlier_cluster_size < 1 ||
       EffectiveTotal() - 2 * outlier_cluster_size < 2)) {
    throw Error(ErrorCode::kInvalidSpec,
                "n_total too small for the outlier clusters");
  }
  if (!(outlier_sigma > 0.0)) {
    throw Error(ErrorCode::kInvalidSpec, "outlier_sigma must be > 0");
  }
}

nlohmann::json ToJson(const SyntheticSpec& spec) {
  return {
      {"kind", SyntheticKindName(spec.kind)},
      {"sigma", spec.sigma},
      {"n_total", spec.EffectiveTotal()},
      {"outlier_margin", spec.outlier_margin},
      {"group_ratio", spec.group_ratio},
      {"seed", spec.seed},
      {"center_offset", spec.center_offset},
      {"outlier_cluster_size", spec.outlier_cluster_size},
      {"outlier_sigma", spec.outlier_sigma},
      {"group_separation", spec.group_separation},
      {"group_shift", spec.group_shift},
  };
}

SyntheticSpec SyntheticSpecFromJson(const nlohmann::json& j) {
  SyntheticSpec spec;
  try {
    spec.kind = ParseSyntheticKind(j.at("kind").get<std::string>());
    spec.sigma = j.value("sigma", spec.sigma);
    spec.n_total = j.value("n_total", spec.n_total);
    spec.outlier_margin = j.value("outlier_margin", spec.outlier_margin);
    spec.group_ratio = j.value("group_ratio", spec.group_ratio);
    spec.seed = j.value("seed", spec.seed);
    spec.center_offset = j.value("center_offset", spec.center_offset);
    spec.outlier_cluster_size =
        j.value("outlier_cluster_size", spec.outlier_cluster_size);
    spec.outlier_sigma = j.value("outlier_sigma", spec.outlier_sigma);
    spec.group_separation = j.value("group_separation", spec.group_separation);
    spec.group_shift = j.value("group_shift", spec.group_shift);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidSpec, e.what());
  }
  spec.Validate();
  return spec;
}

namespace {

struct SyntheticBuilder {
  std::vector<std::array<double, 2>> points;
  std::vector<double> labels;
  std::vector<std::string> groups;

  void AddCluster(std::mt19937_64& rng, double cx, double cy, double sd,
                  int count, double label, const std::string& group) {
    std::normal_distribution<double> noise(0.0, sd);
    for (int k = 0; k < count; ++k) {
      const double px = cx + noise(rng);
      const double py = cy + noise(rng);
      points.push_back({px, py});
      labels.push_back(label);
      groups.push_back(group);
    }
  }

  Dataset Build(bool keep_groups) {
    Matrix x(points.size(), 3);
    Vector y(points.size());
    for (size_t i = 0; i < points.size(); ++i) {
      x(i, 0) = 1.0;
      x(i, 1) = points[i][0];
      x(i, 2) = points[i][1];
      y(i) = labels[i];
    }
    if (!keep_groups) groups.clear();
    return Dataset(std::move(x), std::move(y), {kInterceptName, "x1", "x2"},
                   std::move(groups));
  }
};

}  // namespace

Dataset GenerateSynthetic(const SyntheticSpec& spec) {
  spec.Validate();
  std::mt19937_64 rng(spec.seed);
  SyntheticBuilder b;
  const int total = spec.EffectiveTotal();
  const double c = spec.center_offset;

  switch (spec.kind) {
    case SyntheticKind::kSeparability: {
      const int pos = total / 2;
      b.AddCluster(rng, c, c, spec.sigma, pos, 1.0, "");
      b.AddCluster(rng, -c, -c, spec.sigma, total - pos, -1.0, "");
      return b.Build(false);
    }
    case SyntheticKind::kOutliers: {
      // The discriminant direction of the base clusters is (1,1)/sqrt(2).
      // Outlier clusters sit on the axis through both centres, at signed
      // distance outlier_margin from the separating line, each on the side
      // of its own class.
      const int k = spec.outlier_cluster_size;
      const int base = total - 2 * k;
      const int pos = base / 2;
      const double m = spec.outlier_margin / std::sqrt(2.0);
      b.AddCluster(rng, c, c, spec.sigma, pos, 1.0, "inlier");
      b.AddCluster(rng, m, m, spec.outlier_sigma, k, 1.0, "outlier");
      b.AddCluster(rng, -c, -c, spec.sigma, base - pos, -1.0, "inlier");
      b.AddCluster(rng, -m, -m, spec.outlier_sigma, k, -1.0, "outlier");
      return b.Build(true);
    }
    case SyntheticKind::kMajorityMinority: {
      const int population = total / 2;
      const int half = population / 2;
      const double s = spec.group_separation;
      b.AddCluster(rng, s, 0.0, spec.sigma, half, 1.0, "majority");
      b.AddCluster(rng, -s, 0.0, spec.sigma, population - half, -1.0,
                   "majority");
      SyntheticBuilder minority;
      minority.AddCluster(rng, -s, spec.group_shift, spec.sigma, half, 1.0,
                          "minority");
      minority.AddCluster(rng, s, spec.group_shift, spec.sigma,
                          population - half, -1.0, "minority");
      const int keep = std::min(
          population,
          static_cast<int>(std::lround(population / spec.group_ratio)));
      std::vector<int> order(population);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(keep);
      std::sort(order.begin(), order.end());
      for (int idx : order) {
        b.points.push_back(minority.points[idx]);
        b.labels.push_back(minority.labels[idx]);
        b.groups.push_back(minority.groups[idx]);
      }
      return b.Build(true);
    }
  }
  throw Error(ErrorCode::kInvalidSpec, "unhandled synthetic kind");
}

void WriteCsv(const Dataset& data, const std::string& path,
              const std::string& label_column) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
  for (int j = 1; j < data.dim(); ++j) out << data.feature_names()[j] << ',';
  out << label_column;
  if (data.has_groups()) out << ",group";
  out << '\n';
  for (int i = 0; i < data.n(); ++i) {
    for (int j = 1; j < data.dim(); ++j) {
      out << fmt::format("{}", data.x()(i, j)) << ',';
    }
    out << (data.y()(i) > 0 ? 1 : 0);
    if (data.has_groups()) out << ',' << data.groups()[i];
    out << '\n';
  }
}

}  // namespace mpaudit
