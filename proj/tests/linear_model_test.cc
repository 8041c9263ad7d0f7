#include "mpaudit/linear_model.h"

#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "mpaudit/error.h"
#include "support/oracles.h"

namespace mpaudit {
namespace {

using testing::FiniteDifferenceGradient;
using testing::HandBinnedEce;
using testing::NaiveLogLoss;
using testing::PairwiseAuc;

// Random data with both classes, n rows and `features` Gaussian features.
Dataset RandomData(std::mt19937_64& rng, int n, int features) {
  std::normal_distribution<double> normal;
  Matrix x(n, features + 1);
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    for (int j = 1; j <= features; ++j) x(i, j) = normal(rng);
    y(i) = normal(rng) > 0 ? 1.0 : -1.0;
  }
  y(0) = 1.0;
  y(1) = -1.0;
  std::vector<std::string> names = {kInterceptName};
  for (int j = 1; j <= features; ++j) names.push_back("f" + std::to_string(j));
  return Dataset(std::move(x), std::move(y), std::move(names));
}

std::vector<int> IntLabels(const Vector& y) {
  std::vector<int> out;
  for (Eigen::Index i = 0; i < y.size(); ++i) out.push_back(y(i) > 0 ? 1 : -1);
  return out;
}

Vector LabelVector(const std::vector<int>& labels) {
  Vector y(labels.size());
  for (size_t i = 0; i < labels.size(); ++i) y(i) = labels[i];
  return y;
}

TEST(Sigmoid, StableAtExtremes) {
  EXPECT_DOUBLE_EQ(Sigmoid(0.0), 0.5);
  EXPECT_EQ(Sigmoid(800.0), 1.0);
  EXPECT_GT(Sigmoid(-800.0), 0.0);
  EXPECT_LE(Sigmoid(-800.0), std::numeric_limits<double>::min());
  EXPECT_NEAR(Sigmoid(-30.0), std::exp(-30.0), 1e-25);
  EXPECT_NEAR(Logit(Sigmoid(3.25)), 3.25, 1e-12);
  EXPECT_DOUBLE_EQ(Softplus(1000.0), 1000.0);
  EXPECT_NEAR(Softplus(-40.0), std::exp(-40.0), 1e-30);
  EXPECT_NEAR(Softplus(0.0), std::log(2.0), 1e-15);
}

TEST(LogLoss, MatchesPlainLoop) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> normal;
  for (int t = 0; t < 20; ++t) {
    const Dataset d = RandomData(rng, 5 + t, 1 + t % 6);
    Vector w(d.dim());
    for (int j = 0; j < d.dim(); ++j) w(j) = 3.0 * normal(rng);
    EXPECT_NEAR(LogLoss(LinearModel(w), d), NaiveLogLoss(w, d), 1e-13);
  }
}

TEST(LossGradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> rows(2, 50);
  std::uniform_int_distribution<int> cols(1, 10);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const Dataset d = RandomData(rng, rows(rng), cols(rng));
    Vector w(d.dim());
    for (int j = 0; j < d.dim(); ++j) w(j) = normal(rng);
    const Vector analytic = LossGradient(LinearModel(w), d);
    const Vector numeric = FiniteDifferenceGradient(w, d);
    const double rel = (analytic - numeric).norm() / std::max(numeric.norm(), 1e-12);
    worst = std::max(worst, rel);
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(Auc, EqualsPairwiseCountWithTies) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> size(2, 200);
  std::uniform_int_distribution<int> level(0, 12);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int t = 0; t < 100; ++t) {
    const int n = size(rng);
    std::vector<double> preds(n);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      // Every third instance draws from 13 levels so ties are common.
      preds[i] = t % 3 == 0 ? unit(rng) : level(rng) / 12.0;
      labels[i] = unit(rng) < 0.4 ? 1 : -1;
    }
    labels[0] = 1;
    labels[1] = -1;
    const Vector y = LabelVector(labels);
    for (bool credit : {false, true}) {
      EXPECT_EQ(AucFromPredictions(preds, y, credit),
                PairwiseAuc(preds, labels, credit))
          << "instance " << t << " tie_credit " << credit;
    }
  }
}

TEST(Auc, OneClassThrows) {
  const std::vector<double> preds = {0.1, 0.2};
  Vector y(2);
  y << 1, 1;
  try {
    AucFromPredictions(preds, y);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kOneClassOnly);
  }
}

struct EceCase {
  std::vector<double> preds;
  std::vector<int> labels;
  int bins;
};

std::vector<EceCase> ConstructedEceCases() {
  std::vector<EceCase> cases;
  // Exact bin edges, both ends of the unit interval, one ulp either side of
  // an edge, single-bin and many-bin settings.
  cases.push_back({{0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.0},
                   {-1, 1, -1, 1, 1, -1, 1, 1}, 10});
  const double below = std::nextafter(0.3, 0.0);
  const double above = std::nextafter(0.3, 1.0);
  cases.push_back({{below, 0.3, above, std::nextafter(0.7, 0.0), 0.7},
                   {1, -1, 1, -1, 1}, 10});
  cases.push_back({{0.25, 0.5, 0.75, 1.0}, {1, 1, -1, -1}, 4});
  cases.push_back({{0.2, 0.4, 0.6}, {1, -1, 1}, 1});
  cases.push_back({{0.05, 0.05, 0.05, 0.95}, {-1, -1, 1, 1}, 10});
  cases.push_back({{0.5}, {1}, 10});
  cases.push_back({{1.0 / 3, 2.0 / 3, 1.0 / 3, 2.0 / 3}, {1, -1, -1, 1}, 3});
  cases.push_back({{0.999999, 0.000001}, {1, -1}, 100});
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> bins(1, 20);
  while (cases.size() < 20) {
    EceCase c;
    c.bins = bins(rng);
    const int n = 5 + static_cast<int>(cases.size()) * 7;
    for (int i = 0; i < n; ++i) {
      // Half the points sit exactly on a bin edge.
      const double p = i % 2 ? unit(rng)
                             : static_cast<double>(i % (c.bins + 1)) / c.bins;
      c.preds.push_back(p);
      c.labels.push_back(unit(rng) < p ? 1 : -1);
    }
    cases.push_back(c);
  }
  return cases;
}

TEST(Ece, MatchesHandBinnedComputation) {
  const std::vector<EceCase> cases = ConstructedEceCases();
  ASSERT_EQ(cases.size(), 20u);
  for (size_t k = 0; k < cases.size(); ++k) {
    const EceCase& c = cases[k];
    EXPECT_NEAR(EceFromPredictions(c.preds, LabelVector(c.labels), c.bins),
                HandBinnedEce(c.preds, c.labels, c.bins), 1e-12)
        << "case " << k;
  }
}

TEST(Ece, PerfectCalibrationIsZero) {
  const std::vector<double> preds = {0.25, 0.25, 0.25, 0.25};
  EXPECT_DOUBLE_EQ(EceFromPredictions(preds, LabelVector({1, -1, -1, -1}), 10), 0.0);
  EXPECT_THROW(EceFromPredictions(preds, LabelVector({1, -1, -1, -1}), 0), Error);
}

TEST(Evaluate, ModelAndPredictionFormsAgree) {
  std::mt19937_64 rng(4);
  const Dataset d = RandomData(rng, 40, 3);
  const LinearModel m(Vector::LinSpaced(4, -1.0, 1.0));
  const Vector scores = Scores(m, d);
  EXPECT_DOUBLE_EQ(Evaluate(m, d, MetricSpec::LogLoss()), LogLoss(m, d));
  EXPECT_DOUBLE_EQ(Evaluate(m, d, MetricSpec::AucError()), 1.0 - Auc(m, d));
  EXPECT_DOUBLE_EQ(Evaluate(m, d, MetricSpec::Ece(7)), Ece(m, d, 7));
  for (const MetricSpec& spec :
       {MetricSpec::LogLoss(), MetricSpec::AucError(), MetricSpec::Ece()}) {
    EXPECT_DOUBLE_EQ(EvaluateFromScores(scores, d.y(), spec), Evaluate(m, d, spec));
  }
  const std::vector<int> labels = IntLabels(d.y());
  const Vector p = Predictions(m, d);
  EXPECT_EQ(Auc(m, d, true),
            PairwiseAuc(std::vector<double>(p.begin(), p.end()), labels, true));
}

TEST(MetricNames, RoundTrip) {
  for (const MetricSpec& spec :
       {MetricSpec::LogLoss(), MetricSpec::AucError(), MetricSpec::Ece()}) {
    EXPECT_EQ(ParseMetric(MetricName(spec)).kind, spec.kind);
  }
  EXPECT_EQ(ParseMetric("auc").kind, MetricKind::kAucError);
  EXPECT_THROW(ParseMetric("brier"), Error);
}

TEST(ModelJson, RoundTripAndFeatureCheck) {
  std::mt19937_64 rng(5);
  const Dataset d = RandomData(rng, 10, 2);
  const LinearModel m(Vector::LinSpaced(3, 0.1, 0.7));
  const nlohmann::json j = ModelToJson(m, d.feature_names());
  EXPECT_EQ(ModelFromJson(j, &d), m);
  nlohmann::json renamed = j;
  renamed["feature_names"][1] = "other";
  EXPECT_THROW(ModelFromJson(renamed, &d), Error);
  EXPECT_THROW(ModelToJson(m, {"just-one"}), Error);
}

TEST(CompensatedSum, RecoversCancellation) {
  CompensatedSum s;
  s.Add(1e16);
  s.Add(1.0);
  s.Add(-1e16);
  EXPECT_DOUBLE_EQ(s.value(), 1.0);
}

}  // namespace
}  // namespace mpaudit
