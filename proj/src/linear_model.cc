#include "mpaudit/linear_model.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

#include <fmt/format.h>

#include "mpaudit/error.h"

namespace mpaudit {
namespace {

void CheckDim(const LinearModel& model, int dim) {
  if (model.dim() != dim) {
    throw Error(ErrorCode::kDimensionMismatch,
                fmt::format("model has {} coefficients, data has {} columns",
                            model.dim(), dim));
  }
}

}  // namespace

LinearModel::LinearModel(Vector w) : w_(std::move(w)) {
  if (!w_.allFinite()) {
    throw Error(ErrorCode::kNumericalFailure, "model coefficients must be finite");
  }
}

std::string MetricName(const MetricSpec& metric) {
  switch (metric.kind) {
    case MetricKind::kLogLoss:
      return "log_loss";
    case MetricKind::kAucError:
      return "auc_error";
    case MetricKind::kEce:
      return "ece";
  }
  return "log_loss";
}

MetricSpec ParseMetric(const std::string& name) {
  if (name == "log_loss" || name == "loss") return MetricSpec::LogLoss();
  if (name == "auc_error" || name == "auc") return MetricSpec::AucError();
  if (name == "ece") return MetricSpec::Ece();
  throw Error(ErrorCode::kInvalidConfig, fmt::format("unknown metric '{}'", name));
}

void CompensatedSum::Add(double v) {
  const double t = sum_ + v;
  if (std::abs(sum_) >= std::abs(v)) {
    correction_ += (sum_ - t) + v;
  } else {
    correction_ += (v - t) + sum_;
  }
  sum_ = t;
}

double Sigmoid(double score) {
  if (score >= 0.0) return 1.0 / (1.0 + std::exp(-score));
  const double e = std::exp(score);
  // Keep the result strictly positive even where exp underflows.
  return std::max(e / (1.0 + e), std::numeric_limits<double>::min());
}

double Logit(double p) { return std::log(p) - std::log1p(-p); }

double Softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

double Score(const LinearModel& model, std::span<const double> x) {
  CheckDim(model, static_cast<int>(x.size()));
  double s = 0.0;
  for (size_t j = 0; j < x.size(); ++j) s += model.w()[j] * x[j];
  return s;
}

double Predict(const LinearModel& model, std::span<const double> x) {
  return Sigmoid(Score(model, x));
}

Vector Scores(const LinearModel& model, const Dataset& data) {
  CheckDim(model, data.dim());
  Vector s(data.n());
  for (int i = 0; i < data.n(); ++i) s(i) = Score(model, Row(data, i));
  return s;
}

Vector Predictions(const LinearModel& model, const Dataset& data) {
  Vector p = Scores(model, data);
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = Sigmoid(p(i));
  return p;
}

double LogLossFromScores(const Vector& scores, const Vector& y) {
  CompensatedSum sum;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    sum.Add(Softplus(-y(i) * scores(i)));
  }
  return sum.value() / static_cast<double>(scores.size());
}

double LogLoss(const LinearModel& model, const Dataset& data) {
  return LogLossFromScores(Scores(model, data), data.y());
}

Vector LossGradient(const LinearModel& model, const Dataset& data) {
  CheckDim(model, data.dim());
  std::vector<CompensatedSum> sums(data.dim());
  for (int i = 0; i < data.n(); ++i) {
    const auto x = Row(data, i);
    const double yi = data.y()(i);
    // d/dw log(1 + exp(-y <w,x>)) = sigmoid(-y <w,x>) * (-y x)
    const double weight = -yi * Sigmoid(-yi * Score(model, x));
    for (int j = 0; j < data.dim(); ++j) sums[j].Add(weight * x[j]);
  }
  Vector g(data.dim());
  for (int j = 0; j < data.dim(); ++j) g(j) = sums[j].value() / data.n();
  return g;
}

double AucFromPredictions(std::span<const double> predictions, const Vector& y,
                          bool tie_credit) {
  std::int64_t n_pos = 0;
  std::int64_t n_neg = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) (y(i) > 0 ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0) {
    throw Error(ErrorCode::kOneClassOnly, "AUC needs both classes");
  }
  std::vector<int> order(predictions.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return predictions[a] < predictions[b];
  });

  // Walk blocks of equal prediction in increasing order. Each positive wins
  // against every negative in a strictly lower block; ties count in
  // half-units so the total stays an exact integer.
  std::int64_t half_wins = 0;
  std::int64_t neg_below = 0;
  size_t start = 0;
  while (start < order.size()) {
    size_t end = start;
    std::int64_t pos_here = 0;
    std::int64_t neg_here = 0;
    while (end < order.size() &&
           predictions[order[end]] == predictions[order[start]]) {
      (y(order[end]) > 0 ? pos_here : neg_here)++;
      ++end;
    }
    half_wins += 2 * pos_here * neg_below;
    if (tie_credit) half_wins += pos_here * neg_here;
    neg_below += neg_here;
    start = end;
  }
  return static_cast<double>(half_wins) /
         (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double Auc(const LinearModel& model, const Dataset& data, bool tie_credit) {
  const Vector p = Predictions(model, data);
  return AucFromPredictions({p.data(), static_cast<size_t>(p.size())},
                            data.y(), tie_credit);
}

double EceFromPredictions(std::span<const double> predictions, const Vector& y,
                          int bins) {
  if (bins < 1) throw Error(ErrorCode::kInvalidSpec, "ece_bins must be >= 1");
  std::vector<CompensatedSum> pred_sum(bins);
  std::vector<int> pos(bins, 0);
  std::vector<int> count(bins, 0);
  for (size_t i = 0; i < predictions.size(); ++i) {
    // Bins are [k/B, (k+1)/B) except the last, which also takes 1.0.
    int b = std::clamp(static_cast<int>(std::floor(predictions[i] * bins)), 0,
                       bins - 1);
    // p * bins can round across an edge; settle against the edges themselves.
    if (b > 0 && predictions[i] < static_cast<double>(b) / bins) --b;
    if (b + 1 < bins && predictions[i] >= static_cast<double>(b + 1) / bins) ++b;
    pred_sum[b].Add(predictions[i]);
    pos[b] += y(i) > 0 ? 1 : 0;
    ++count[b];
  }
  CompensatedSum total;
  const double n = static_cast<double>(predictions.size());
  for (int b = 0; b < bins; ++b) {
    if (count[b] == 0) continue;
    const double mean_pred = pred_sum[b].value() / count[b];
    const double mean_obs = static_cast<double>(pos[b]) / count[b];
    total.Add(count[b] / n * std::abs(mean_pred - mean_obs));
  }
  return total.value();
}

double Ece(const LinearModel& model, const Dataset& data, int bins) {
  const Vector p = Predictions(model, data);
  return EceFromPredictions({p.data(), static_cast<size_t>(p.size())},
                            data.y(), bins);
}

double EvaluateFromScores(const Vector& scores, const Vector& y,
                          const MetricSpec& metric) {
  if (metric.kind == MetricKind::kLogLoss) return LogLossFromScores(scores, y);
  Vector p(scores.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = Sigmoid(scores(i));
  const std::span<const double> view(p.data(), static_cast<size_t>(p.size()));
  if (metric.kind == MetricKind::kAucError) {
    return 1.0 - AucFromPredictions(view, y, metric.auc_tie_credit);
  }
  return EceFromPredictions(view, y, metric.ece_bins);
}

double Evaluate(const LinearModel& model, const Dataset& data,
                const MetricSpec& metric) {
  return EvaluateFromScores(Scores(model, data), data.y(), metric);
}

nlohmann::json ModelToJson(const LinearModel& model,
                           const std::vector<std::string>& feature_names) {
  CheckDim(model, static_cast<int>(feature_names.size()));
  return {{"feature_names", feature_names},
          {"coefficients", std::vector<double>(model.w().begin(),
                                               model.w().end())}};
}

LinearModel ModelFromJson(const nlohmann::json& j, const Dataset* data) {
  std::vector<std::string> names;
  std::vector<double> coefs;
  try {
    names = j.at("feature_names").get<std::vector<std::string>>();
    coefs = j.at("coefficients").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, e.what());
  }
  if (names.size() != coefs.size()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "feature_names and coefficients differ in length");
  }
  if (data != nullptr && names != data->feature_names()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "model features do not match the dataset");
  }
  return LinearModel(Eigen::Map<const Vector>(coefs.data(), coefs.size()));
}

}  // namespace mpaudit
