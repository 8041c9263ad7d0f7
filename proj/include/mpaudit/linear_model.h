#ifndef MPAUDIT_LINEAR_MODEL_H_
#define MPAUDIT_LINEAR_MODEL_H_

#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpaudit/dataset.h"

namespace mpaudit {

// Logistic model g(x) = 1 / (1 + exp(-<w, x>)); w[0] multiplies the intercept
// column.
class LinearModel {
 public:
  LinearModel() = default;
  explicit LinearModel(Vector w);
  static LinearModel Zero(int dim) { return LinearModel(Vector::Zero(dim)); }

  const Vector& w() const { return w_; }
  int dim() const { return static_cast<int>(w_.size()); }

  friend bool operator==(const LinearModel& a, const LinearModel& b) {
    return a.w_.size() == b.w_.size() && a.w_ == b.w_;
  }

 private:
  Vector w_;
};

enum class MetricKind { kLogLoss, kAucError, kEce };

// Lower-is-better performance metric. AUC enters as 1 - AUC.
struct MetricSpec {
  MetricKind kind = MetricKind::kLogLoss;
  int ece_bins = 10;
  // Ties between a positive and a negative earn half credit instead of none.
  bool auc_tie_credit = false;

  static MetricSpec LogLoss() { return {MetricKind::kLogLoss}; }
  static MetricSpec AucError() { return {MetricKind::kAucError}; }
  static MetricSpec Ece(int bins = 10) { return {MetricKind::kEce, bins}; }
};

std::string MetricName(const MetricSpec& metric);
MetricSpec ParseMetric(const std::string& name);

// Neumaier-compensated running sum. Fixed-order accumulation keeps metric
// values reproducible bit-for-bit.
class CompensatedSum {
 public:
  void Add(double v);
  double value() const { return sum_ + correction_; }

 private:
  double sum_ = 0.0;
  double correction_ = 0.0;
};

double Sigmoid(double score);
double Logit(double p);
// log(1 + exp(z)) without overflow.
double Softplus(double z);

double Score(const LinearModel& model, std::span<const double> x);
double Predict(const LinearModel& model, std::span<const double> x);
inline std::span<const double> Row(const Dataset& data, int i) {
  return {data.x().row(i).data(), static_cast<size_t>(data.dim())};
}

// Scores <w, x_i> and predictions for every row.
Vector Scores(const LinearModel& model, const Dataset& data);
Vector Predictions(const LinearModel& model, const Dataset& data);

double LogLoss(const LinearModel& model, const Dataset& data);
Vector LossGradient(const LinearModel& model, const Dataset& data);

double Auc(const LinearModel& model, const Dataset& data,
           bool tie_credit = false);
double Ece(const LinearModel& model, const Dataset& data, int bins = 10);
double Evaluate(const LinearModel& model, const Dataset& data,
                const MetricSpec& metric);

// Prediction-level forms, used when predictions are already cached.
double LogLossFromScores(const Vector& scores, const Vector& y);
double AucFromPredictions(std::span<const double> predictions, const Vector& y,
                          bool tie_credit = false);
double EceFromPredictions(std::span<const double> predictions, const Vector& y,
                          int bins);
double EvaluateFromScores(const Vector& scores, const Vector& y,
                          const MetricSpec& metric);

nlohmann::json ModelToJson(const LinearModel& model,
                           const std::vector<std::string>& feature_names);
// Throws DimensionMismatch if `data` is given and the feature names differ.
LinearModel ModelFromJson(const nlohmann::json& j,
                          const Dataset* data = nullptr);

}  // namespace mpaudit

#endif  // MPAUDIT_LINEAR_MODEL_H_
