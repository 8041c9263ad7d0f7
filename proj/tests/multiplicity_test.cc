#include "mpaudit/multiplicity.h"

#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "mpaudit/error.h"

namespace mpaudit {
namespace {

const std::vector<double> kEpsilonGrid = {0.001, 0.005, 0.01, 0.02, 0.05};
const std::vector<double> kDeltaGrid = {0.05, 0.1, 0.2, 0.3};

const std::vector<MetricSpec>& AllMetrics() {
  static const std::vector<MetricSpec> metrics = {
      MetricSpec::LogLoss(), MetricSpec::AucError(), MetricSpec::Ece()};
  return metrics;
}

// Ten small datasets across every synthetic kind.
Dataset Small(int k) {
  SyntheticSpec spec;
  spec.kind = static_cast<SyntheticKind>(k % 3);
  spec.seed = 100 + k;
  spec.sigma = k % 3 == 2 ? 3.0 : 10.0;
  spec.n_total = spec.kind == SyntheticKind::kOutliers ? 44 : 40;
  spec.outlier_cluster_size = 4;
  spec.group_ratio = 2.0;
  return GenerateSynthetic(spec);
}

CandidatePool SmallPool(int k, int threads = 1) {
  const Dataset d = Small(k);
  const LinearModel base = TrainBaseline(d, {}).model;
  PoolOptions options;
  options.threads = threads;
  return BuildPool(d, base, options);
}

class PoolProperties : public ::testing::TestWithParam<int> {
 protected:
  static void SetUpTestSuite() {
    pools_ = new std::vector<CandidatePool>();
    for (int k = 0; k < 10; ++k) pools_->push_back(SmallPool(k));
  }
  static void TearDownTestSuite() {
    delete pools_;
    pools_ = nullptr;
  }
  const CandidatePool& pool() const { return (*pools_)[GetParam()]; }

  static std::vector<CandidatePool>* pools_;
};

std::vector<CandidatePool>* PoolProperties::pools_ = nullptr;

TEST_P(PoolProperties, LevelSetMembersReverify) {
  const CandidatePool& p = pool();
  for (const MetricSpec& metric : AllMetrics()) {
    const MetricSpec spec = p.Spec(metric.kind);
    const double base = Evaluate(p.baseline().model, p.data(), spec);
    for (double eps : kEpsilonGrid) {
      for (int k : FilterLevelSet(p, MakeLevelSet(p, metric, eps))) {
        EXPECT_LE(Evaluate(p.members()[k].model, p.data(), spec), base + eps + 1e-12)
            << MetricName(metric) << " eps " << eps << " member " << k;
      }
    }
  }
}

TEST_P(PoolProperties, MonotoneInEpsilonAndDelta) {
  const CandidatePool& p = pool();
  for (const MetricSpec& metric : AllMetrics()) {
    const MultiplicityReport r = Sweep(p, metric, kEpsilonGrid, kDeltaGrid);
    for (size_t e = 0; e < kEpsilonGrid.size(); ++e) {
      for (size_t d = 0; d < kDeltaGrid.size(); ++d) {
        const MultiplicityCell& c = r.Cell(e, d);
        EXPECT_LE(c.discrepancy_lower_bound, c.ambiguity);
        if (e > 0) EXPECT_GE(c.ambiguity, r.Cell(e - 1, d).ambiguity);
        if (d > 0) EXPECT_LE(c.ambiguity, r.Cell(e, d - 1).ambiguity);
      }
    }
    Vector previous;
    for (double eps : kEpsilonGrid) {
      const ViableRange v = ViableRanges(p, MakeLevelSet(p, metric, eps));
      const Vector width = v.hi - v.lo;
      EXPECT_GE(width.minCoeff(), 0.0);
      if (previous.size()) EXPECT_TRUE(((width - previous).array() >= 0.0).all());
      previous = width;
    }
  }
}

TEST_P(PoolProperties, AmbiguityMatchesDirectRecount) {
  const CandidatePool& p = pool();
  const Dataset& d = p.eval_data();
  for (double eps : {0.005, 0.05}) {
    const LevelSetSpec spec = MakeLevelSet(p, MetricSpec::LogLoss(), eps);
    const std::vector<int> members = FilterLevelSet(p, spec);
    for (double delta : kDeltaGrid) {
      int ambiguous = 0;
      int best = 0;
      for (int i = 0; i < d.n(); ++i) {
        const double base = Predict(p.baseline().model, Row(d, i));
        bool hit = false;
        for (int k : members) {
          hit = hit || std::abs(Predict(p.members()[k].model, Row(d, i)) - base) >=
                           delta - kDeviationSlack;
        }
        ambiguous += hit;
      }
      for (int k : members) {
        int count = 0;
        for (int i = 0; i < d.n(); ++i) {
          const double base = Predict(p.baseline().model, Row(d, i));
          count += std::abs(Predict(p.members()[k].model, Row(d, i)) - base) >=
                   delta - kDeviationSlack;
        }
        best = std::max(best, count);
      }
      EXPECT_DOUBLE_EQ(Ambiguity(p, spec, delta).ambiguity,
                       static_cast<double>(ambiguous) / d.n());
      EXPECT_EQ(DiscrepancyLowerBound(p, spec, delta).count, best);
    }
  }
}

TEST_P(PoolProperties, NearOneDeltaIsNeverAmbiguous) {
  const CandidatePool& p = pool();
  const MultiplicityReport r =
      Sweep(p, MetricSpec::LogLoss(), kEpsilonGrid, {0.2, 0.99});
  for (size_t e = 0; e < kEpsilonGrid.size(); ++e) {
    EXPECT_EQ(r.Cell(e, 1).ambiguity, 0.0);
  }
}

TEST_P(PoolProperties, GroupBreakdownAveragesToOverall) {
  const CandidatePool& p = pool();
  const MultiplicityReport r = Sweep(p, MetricSpec::LogLoss(), kEpsilonGrid, kDeltaGrid);
  if (!p.data().has_groups()) {
    EXPECT_TRUE(r.group_breakdown.empty());
    return;
  }
  for (const MultiplicityCell& c : r.cells) {
    double weighted = 0.0;
    int total = 0;
    for (const GroupCell& g : r.group_breakdown) {
      if (g.epsilon != c.epsilon || g.delta != c.delta) continue;
      weighted += g.ambiguity * g.size;
      total += g.size;
    }
    EXPECT_EQ(total, p.data().n());
    EXPECT_NEAR(weighted / total, c.ambiguity, 1e-12);
  }
}

INSTANTIATE_TEST_SUITE_P(TenDatasets, PoolProperties, ::testing::Range(0, 10));

TEST(BuildPool, BaselineFirstAndThreadIndependent) {
  const CandidatePool one = SmallPool(3, 1);
  const CandidatePool many = SmallPool(3, 4);
  ASSERT_EQ(one.size(), many.size());
  EXPECT_EQ(one.baseline().provenance.kind, Provenance::Kind::kBaseline);
  for (size_t k = 0; k < one.size(); ++k) {
    EXPECT_EQ(one.members()[k].model, many.members()[k].model);
    EXPECT_EQ(one.members()[k].provenance.example_index,
              many.members()[k].provenance.example_index);
  }
}

TEST(BuildPool, FailuresAreRecordedNotThrown) {
  const Dataset d = Small(0);
  const LinearModel base = TrainBaseline(d, {}).model;
  PoolOptions options;
  options.train.max_iters = 1;
  const CandidatePool pool = BuildPool(d, base, options);
  EXPECT_FALSE(pool.failures().empty());
  EXPECT_LE(pool.size() + pool.failures().size(),
            1 + static_cast<size_t>(d.n()) * ThresholdSpec::DefaultGrid().size());
  for (const TrainingFailure& f : pool.failures()) {
    EXPECT_GE(f.example_index, 0);
    EXPECT_FALSE(f.message.empty());
  }
}

TEST(CandidateConstraints, GridPointsAwayFromBaseline) {
  const std::vector<ScoreConstraint> cs =
      CandidateConstraints(4, 0.35, ThresholdSpec{});
  ASSERT_EQ(cs.size(), 11u);
  for (const ScoreConstraint& c : cs) {
    EXPECT_EQ(c.example_index(), 4);
    EXPECT_EQ(c.direction(), c.threshold_probability() < 0.35
                                 ? ConstraintDirection::kAtMost
                                 : ConstraintDirection::kAtLeast);
  }
  // A threshold equal to the baseline risk adds nothing.
  EXPECT_EQ(CandidateConstraints(0, 0.5, ThresholdSpec{}).size(), 10u);
}

TEST(CandidateConstraints, AlignedTargetsBothSides) {
  ThresholdSpec spec;
  spec.mode = ThresholdMode::kAligned;
  spec.delta = 0.2;
  const std::vector<ScoreConstraint> cs = CandidateConstraints(1, 0.3, spec);
  ASSERT_EQ(cs.size(), 2u);
  EXPECT_EQ(cs[0].direction(), ConstraintDirection::kAtMost);
  EXPECT_NEAR(cs[0].threshold_probability(), 0.1, 1e-15);
  EXPECT_EQ(cs[1].direction(), ConstraintDirection::kAtLeast);
  EXPECT_NEAR(cs[1].threshold_probability(), 0.5, 1e-15);
  // Clamped at the edge of the unit interval.
  EXPECT_EQ(CandidateConstraints(1, 0.1, spec)[0].threshold_probability(),
            ScoreConstraint::kMinProbability);
}

TEST(AlignedPool, ReachesDeltaWhereverTheTargetIsAttainable) {
  const Dataset d = Small(1);
  const LinearModel base = TrainBaseline(d, {}).model;
  PoolOptions options;
  options.thresholds.mode = ThresholdMode::kAligned;
  options.thresholds.delta = 0.2;
  const CandidatePool pool = BuildPool(d, base, options);
  ASSERT_TRUE(pool.failures().empty());
  EXPECT_EQ(pool.size(), 1 + 2 * static_cast<size_t>(d.n()));
  // Without a level-set restriction every example reaches the target, up to
  // the solver's feasibility tolerance.
  const LevelSetSpec loose = MakeLevelSet(pool, MetricSpec::LogLoss(), 1e6);
  EXPECT_DOUBLE_EQ(Ambiguity(pool, loose, 0.2 - 1e-4).ambiguity, 1.0);
}

TEST(Sweep, RejectsBadGrids) {
  const CandidatePool pool = SmallPool(0);
  EXPECT_THROW(Sweep(pool, MetricSpec::LogLoss(), {0.01, 0.01}, {0.1}), Error);
  EXPECT_THROW(Sweep(pool, MetricSpec::LogLoss(), {0.01}, {0.3, 0.1}), Error);
  EXPECT_THROW(Sweep(pool, MetricSpec::LogLoss(), {}, {0.1}), Error);
}

TEST(Sweep, LossRangesAreExactAndOthersConservative) {
  const CandidatePool pool = SmallPool(0);
  EXPECT_EQ(Sweep(pool, MetricSpec::LogLoss(), {0.01}, {0.1}).estimate_kind,
            EstimateKind::kExactForLoss);
  EXPECT_EQ(Sweep(pool, MetricSpec::Ece(), {0.01}, {0.1}).estimate_kind,
            EstimateKind::kConservative);
}

TEST(SeparateEvaluation, PredictionsFollowTheEvalSample) {
  const Dataset train = Small(0);
  const Dataset eval = GenerateSynthetic({.sigma = 10.0, .n_total = 30, .seed = 77});
  const LinearModel base = TrainBaseline(train, {}).model;
  const CandidatePool pool = BuildPool(train, base, PoolOptions{}, eval);
  EXPECT_TRUE(pool.has_separate_eval());
  EXPECT_EQ(pool.baseline().predictions.size(), 30);
  EXPECT_EQ(pool.baseline().predictions, Predictions(base, eval));
  // Level sets are still judged on the training sample.
  EXPECT_DOUBLE_EQ(pool.baseline().metrics[0], LogLoss(base, train));
}

TEST(PoolArchive, SaveLoadRoundTrip) {
  const CandidatePool pool = SmallPool(2);
  const std::string dir =
      (std::filesystem::path(::testing::TempDir()) / "mpaudit_pool_archive").string();
  SavePool(pool, dir);
  const CandidatePool back = LoadPool(dir, pool.data());
  ASSERT_EQ(back.size(), pool.size());
  for (size_t k = 0; k < pool.size(); ++k) {
    EXPECT_EQ(back.members()[k].model, pool.members()[k].model);
    EXPECT_EQ(back.members()[k].metrics, pool.members()[k].metrics);
    EXPECT_EQ(back.members()[k].provenance.threshold,
              pool.members()[k].provenance.threshold);
  }
  // A different dataset must be refused.
  EXPECT_THROW(LoadPool(dir, Small(5)), Error);
}

}  // namespace
}  // namespace mpaudit
