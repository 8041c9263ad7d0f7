#ifndef MPAUDIT_DATASET_H_
#define MPAUDIT_DATASET_H_

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

namespace mpaudit {

using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr char kInterceptName[] = "(intercept)";

// Binary classification data. Row i of `x()` is [1, x_i1, ..., x_id]; labels
// are stored as -1/+1. Immutable once constructed; the constructor enforces
// every invariant so downstream code never re-validates.
class Dataset {
 public:
  // `x` must already contain the intercept column. `groups` is either empty or
  // holds one label per row.
  Dataset(Matrix x, Vector y, std::vector<std::string> feature_names,
          std::vector<std::string> groups = {});

  const Matrix& x() const { return x_; }
  const Vector& y() const { return y_; }
  const std::vector<std::string>& feature_names() const {
    return feature_names_;
  }
  const std::vector<std::string>& groups() const { return groups_; }
  bool has_groups() const { return !groups_.empty(); }

  int n() const { return static_cast<int>(x_.rows()); }
  // Coefficient count d + 1 (intercept included).
  int dim() const { return static_cast<int>(x_.cols()); }
  int n_pos() const { return n_pos_; }
  int n_neg() const { return n_neg_; }

  // Distinct group labels in first-appearance order.
  std::vector<std::string> GroupLevels() const;

  Dataset Subset(const std::vector<int>& rows) const;

 private:
  Matrix x_;
  Vector y_;
  std::vector<std::string> feature_names_;
  std::vector<std::string> groups_;
  int n_pos_ = 0;
  int n_neg_ = 0;
};

// Reads a comma-separated file with a header row. Every column other than the
// label and group columns is a numeric feature. Rows whose label equals
// `positive_label` become +1, all others -1.
Dataset LoadCsv(const std::string& path, const std::string& label_column,
                const std::optional<std::string>& group_column,
                const std::string& positive_label);

// Row-wise concatenation; both inputs must have the same feature names.
Dataset Concatenate(const Dataset& a, const Dataset& b);

// Per-feature affine map fitted on one sample and reusable on another with the
// same feature names. Constant columns are centred only.
struct Standardizer {
  Vector mean;   // Entry 0 (intercept) is unused.
  Vector scale;

  static Standardizer Fit(const Dataset& data);
  Dataset Apply(const Dataset& data) const;
};

// Z-scores every non-intercept feature (population standard deviation).
Dataset Standardize(const Dataset& data);

// Seeded shuffle-split. Returns (train, test).
std::pair<Dataset, Dataset> ShuffleSplit(const Dataset& data,
                                         double test_fraction,
                                         std::uint64_t seed);

// For each row, the number of rows with a bitwise-identical feature vector
// (the row itself included).
std::vector<int> DuplicateCounts(const Dataset& data);

enum class SyntheticKind { kSeparability, kOutliers, kMajorityMinority };

// Parameters for the synthetic study datasets. Zero `n_total` selects the
// per-kind default (200, 320, 300). The geometry fields are fixed choices for
// quantities the original studies leave open.
struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::kSeparability;
  double sigma = 4.0;
  int n_total = 0;
  double outlier_margin = 4.0;
  double group_ratio = 1.0;
  std::uint64_t seed = 0;

  // Cluster centres sit at +/-(center_offset, center_offset).
  double center_offset = 12.25;
  // Points in each of the two outlier clusters, and their spread.
  int outlier_cluster_size = 10;
  double outlier_sigma = 1.0;
  // Majority-minority geometry: class centres at (+/-group_separation, 0) for
  // the majority and (-/+group_separation, group_shift) for the minority, whose
  // feature-label relation is mirrored.
  double group_separation = 4.0;
  double group_shift = 8.0;

  int EffectiveTotal() const;
  void Validate() const;
};

std::string_view SyntheticKindName(SyntheticKind kind);
SyntheticKind ParseSyntheticKind(std::string_view name);

nlohmann::json ToJson(const SyntheticSpec& spec);
SyntheticSpec SyntheticSpecFromJson(const nlohmann::json& j);

// Deterministic in `spec`. Separability and outlier data carry no groups
// except that the outlier kind labels rows "inlier"/"outlier"; majority-
// minority data labels rows "majority"/"minority".
Dataset GenerateSynthetic(const SyntheticSpec& spec);

// Writes features (without the intercept), label as 0/1 and groups if present.
void WriteCsv(const Dataset& data, const std::string& path,
              const std::string& label_column = "label");

}  // namespace mpaudit

#endif  // MPAUDIT_DATASET_H_
