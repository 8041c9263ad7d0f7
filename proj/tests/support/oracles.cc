#include "oracles.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "mpaudit/trainer.h"

namespace mpaudit::testing {

double NaiveLogLoss(const Vector& w, const Dataset& data) {
  long double total = 0.0L;
  for (int i = 0; i < data.n(); ++i) {
    long double s = 0.0L;
    for (int j = 0; j < data.dim(); ++j) s += w(j) * data.x()(i, j);
    const long double m = -data.y()(i) * s;
    total += m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
  }
  return static_cast<double>(total / data.n());
}

Vector FiniteDifferenceGradient(const Vector& w, const Dataset& data, double h) {
  Vector g(w.size());
  for (int j = 0; j < w.size(); ++j) {
    Vector up = w;
    Vector down = w;
    up(j) += h;
    down(j) -= h;
    g(j) = (NaiveLogLoss(up, data) - NaiveLogLoss(down, data)) / (2 * h);
  }
  return g;
}

double PairwiseAuc(const std::vector<double>& predictions,
                   const std::vector<int>& labels, bool tie_credit) {
  double wins = 0.0;
  long pairs = 0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t k = 0; k < predictions.size(); ++k) {
      if (labels[k] == 1) continue;
      ++pairs;
      if (predictions[i] > predictions[k]) wins += 1.0;
      if (predictions[i] == predictions[k] && tie_credit) wins += 0.5;
    }
  }
  return wins / pairs;
}

double HandBinnedEce(const std::vector<double>& predictions,
                     const std::vector<int>& labels, int bins) {
  std::map<int, std::vector<size_t>> members;
  for (size_t i = 0; i < predictions.size(); ++i) {
    int b = 0;
    while (b + 1 < bins && predictions[i] >= static_cast<double>(b + 1) / bins) ++b;
    members[b].push_back(i);
  }
  double ece = 0.0;
  for (const auto& [b, idx] : members) {
    double pred = 0.0;
    double obs = 0.0;
    for (size_t i : idx) {
      pred += predictions[i];
      obs += labels[i] == 1 ? 1.0 : 0.0;
    }
    const double size = static_cast<double>(idx.size());
    ece += size / predictions.size() * std::abs(pred / size - obs / size);
  }
  return ece;
}

std::optional<double> VertexEnumerationMax(double c0, double c1, double lo0,
                                           double hi0, double lo1, double hi1,
                                           const std::vector<Halfplane>& rows) {
  std::vector<Halfplane> all = rows;
  all.push_back({1, 0, hi0});
  all.push_back({-1, 0, -lo0});
  all.push_back({0, 1, hi1});
  all.push_back({0, -1, -lo1});
  std::optional<double> best;
  for (size_t p = 0; p < all.size(); ++p) {
    for (size_t q = p + 1; q < all.size(); ++q) {
      const double det = all[p].a0 * all[q].a1 - all[p].a1 * all[q].a0;
      if (std::abs(det) < 1e-12) continue;
      const double x0 = (all[p].b * all[q].a1 - all[p].a1 * all[q].b) / det;
      const double x1 = (all[p].a0 * all[q].b - all[p].b * all[q].a0) / det;
      bool feasible = true;
      for (const Halfplane& h : all) {
        const double scale = std::max({1.0, std::abs(h.a0), std::abs(h.a1), std::abs(h.b)});
        if (h.a0 * x0 + h.a1 * x1 > h.b + 1e-9 * scale) feasible = false;
      }
      if (!feasible) continue;
      const double v = c0 * x0 + c1 * x1;
      if (!best || v > *best) best = v;
    }
  }
  return best;
}

namespace {

// Loss restricted to the intercept line w = (b, fixed...), through the
// offsets c_i = <fixed, x_i[1:]>.
struct InterceptLine {
  const std::vector<double>& offset;
  const Vector& y;

  double Loss(double b) const {
    double total = 0.0;
    for (size_t i = 0; i < offset.size(); ++i) {
      total += Softplus(-y(i) * (b + offset[i]));
    }
    return total / offset.size();
  }
  double Slope(double b) const {
    double total = 0.0;
    for (size_t i = 0; i < offset.size(); ++i) {
      total += -y(i) * Sigmoid(-y(i) * (b + offset[i]));
    }
    return total / offset.size();
  }
  double Curvature(double b) const {
    double total = 0.0;
    for (size_t i = 0; i < offset.size(); ++i) {
      const double s = Sigmoid(b + offset[i]);
      total += s * (1.0 - s);
    }
    return total / offset.size();
  }
};

// Minimizer of the convex line loss on [lo, hi]: Newton from `start`,
// falling back to bisection whenever a step leaves the bracket.
double LineArgmin(const InterceptLine& line, double lo, double hi, double start) {
  if (line.Slope(lo) >= 0) return lo;
  if (line.Slope(hi) <= 0) return hi;
  double b = std::clamp(start, lo, hi);
  for (int it = 0; it < 200; ++it) {
    const double slope = line.Slope(b);
    if (slope < 0) {
      lo = b;
    } else {
      hi = b;
    }
    const double curvature = line.Curvature(b);
    double next = curvature > 0 ? b - slope / curvature : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - b) < 1e-12 * std::max(1.0, std::abs(b)) || hi - lo < 1e-12) {
      return next;
    }
    b = next;
  }
  return b;
}

// Root of the monotone function f on [lo, hi] where f(lo) and f(hi) differ in
// sign, by bisection.
template <typename F>
double Bisect(F f, double lo, double hi, bool increasing) {
  for (int it = 0; it < 200 && hi - lo > 1e-13 * std::max(1.0, std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    if ((f(mid) < 0) == increasing) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

class GridSearch {
 public:
  GridSearch(const DiscrepancyProblem& problem, double h)
      : p_(problem), h_(h), dim_(problem.dim()), w_(problem.dim()),
        offset_(problem.n()) {}

  GridOracleResult Run() {
    Recurse(1);
    return result_;
  }

 private:
  long FirstIndex(int j) const { return static_cast<long>(std::ceil(p_.coef_lower(j) / h_ - 1e-9)); }
  long LastIndex(int j) const { return static_cast<long>(std::floor(p_.coef_upper(j) / h_ + 1e-9)); }

  // Returns whether any point of the slice family below j is feasible.
  bool Recurse(int j) {
    if (j == dim_) return Slice();
    bool seen = false;
    for (long k = FirstIndex(j); k <= LastIndex(j); ++k) {
      w_(j) = k * h_;
      const bool feasible = Recurse(j + 1);
      // Slices of a convex set along one axis form an interval.
      if (seen && !feasible) break;
      seen = seen || feasible;
    }
    return seen;
  }

  bool Slice() {
    const Dataset& data = p_.data;
    for (int i = 0; i < p_.n(); ++i) {
      double c = 0.0;
      for (int j = 1; j < dim_; ++j) c += w_(j) * data.x()(i, j);
      offset_[i] = c;
    }
    const InterceptLine line{offset_, data.y()};
    const double lo = FirstIndex(0) * h_;
    const double hi = LastIndex(0) * h_;
    const double limit = p_.loss_limit();

    const double argmin = LineArgmin(line, lo, hi, last_argmin_);
    last_argmin_ = argmin;
    if (line.Loss(argmin) > limit) return false;
    const auto excess = [&](double b) { return line.Loss(b) - limit; };
    const double left = excess(lo) <= 0 ? lo : Bisect(excess, lo, argmin, false);
    const double right = excess(hi) <= 0 ? hi : Bisect(excess, argmin, hi, true);

    const long first = static_cast<long>(std::ceil(left / h_ - 1e-9));
    const long last = static_cast<long>(std::floor(right / h_ + 1e-9));
    if (first > last) return true;

    // The count changes only where some score crosses a threshold.
    std::set<long> picks = {first, last};
    for (int i = 0; i < p_.n(); ++i) {
      for (double v : {p_.v_plus(i), p_.v_minus(i)}) {
        if (!std::isfinite(v)) continue;
        const double t = (v - offset_[i]) / h_;
        for (long k : {static_cast<long>(std::floor(t)) - 1,
                       static_cast<long>(std::floor(t)),
                       static_cast<long>(std::ceil(t)),
                       static_cast<long>(std::ceil(t)) + 1}) {
          if (k >= first && k <= last) picks.insert(k);
        }
      }
    }
    for (long k : picks) {
      w_(0) = k * h_;
      if (LogLoss(LinearModel(w_), data) > limit) continue;
      ++result_.feasible_points;
      const int count = DeviationCount(p_, w_);
      if (count > result_.count || result_.w.size() == 0) {
        result_.count = std::max(result_.count, count);
        result_.w = w_;
      }
    }
    return true;
  }

  const DiscrepancyProblem& p_;
  double h_;
  int dim_;
  Vector w_;
  std::vector<double> offset_;
  double last_argmin_ = 0.0;
  GridOracleResult result_;
};

}  // namespace

GridOracleResult GridDiscrepancyOracle(const DiscrepancyProblem& problem,
                                       double h) {
  return GridSearch(problem, h).Run();
}

std::vector<Vector> SampleLevelSet(const DiscrepancyProblem& problem,
                                   std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Vector& w0 = problem.baseline.w();
  const auto inside = [&](const Vector& w) {
    for (int j = 0; j < w.size(); ++j) {
      if (w(j) < problem.coef_lower(j) || w(j) > problem.coef_upper(j)) return false;
    }
    return NaiveLogLoss(w, problem.data) <= problem.loss_limit();
  };
  std::vector<Vector> out;
  while (static_cast<int>(out.size()) < count) {
    Vector u(w0.size());
    for (int j = 0; j < u.size(); ++j) u(j) = normal(rng);
    u.normalize();
    double lo = 0.0;
    double hi = 1.0;
    while (inside(w0 + hi * u) && hi < 1e6) hi *= 2.0;
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      (inside(w0 + mid * u) ? lo : hi) = mid;
    }
    out.push_back(w0 + unit(rng) * lo * u);
  }
  return out;
}

std::vector<Vector> SampleBox(const DiscrepancyProblem& problem,
                              std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Vector> out;
  for (int k = 0; k < count; ++k) {
    Vector w(problem.dim());
    for (int j = 0; j < w.size(); ++j) {
      w(j) = problem.coef_lower(j) +
             unit(rng) * (problem.coef_upper(j) - problem.coef_lower(j));
    }
    out.push_back(w);
  }
  return out;
}

double MaxViolation(const MilpModel& model, const Vector& x) {
  double worst = 0.0;
  for (size_t c = 0; c < model.columns.size(); ++c) {
    worst = std::max({worst, model.columns[c].lo - x(c), x(c) - model.columns[c].hi});
  }
  for (const MilpRow& row : model.rows) {
    double activity = 0.0;
    for (const auto& [c, a] : row.coefs) activity += a * x(c);
    const double excess = activity - row.rhs;
    switch (row.sense) {
      case RowSense::kLe:
        worst = std::max(worst, excess);
        break;
      case RowSense::kGe:
        worst = std::max(worst, -excess);
        break;
      case RowSense::kEq:
        worst = std::max(worst, std::abs(excess));
        break;
    }
  }
  return worst;
}

Dataset RandomDeskInstance(std::uint64_t seed, int features, int n) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::string> names = {kInterceptName};
  for (int j = 1; j <= features; ++j) names.push_back("x" + std::to_string(j));
  while (true) {
    Matrix x(n, features + 1);
    Vector y(n);
    int positives = 0;
    for (int i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      for (int j = 1; j <= features; ++j) x(i, j) = normal(rng);
      y(i) = x(i, 1) + 1.5 * normal(rng) > 0 ? 1.0 : -1.0;
      positives += y(i) > 0;
    }
    if (positives == 0 || positives == n) continue;
    Dataset data(x, y, names);
    const LinearModel baseline = TrainBaseline(data, TrainConfig{}).model;
    if (baseline.w().cwiseAbs().maxCoeff() <= 5.0) return data;
  }
}

MilpModel RandomMilpModel(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> coin(0, 3);
  MilpModel m;
  m.name = "R" + std::to_string(seed);
  m.maximize = seed % 2 == 0;
  const int n = 3 + static_cast<int>(seed % 7);
  for (int j = 0; j < n; ++j) {
    MilpColumn c;
    c.name = "x" + std::to_string(j);
    switch (coin(rng)) {
      case 0:  // Binary.
        c.integer = true;
        break;
      case 1:  // General integer.
        c.integer = true;
        c.lo = -3.0;
        c.hi = 7.0;
        break;
      case 2:  // Fixed.
        c.lo = c.hi = normal(rng);
        break;
      default:
        c.lo = -std::abs(normal(rng)) * 1e3;
        c.hi = std::abs(normal(rng)) * 1e-3;
    }
    c.objective = coin(rng) == 0 ? 0.0 : normal(rng) * std::pow(10.0, coin(rng) - 1);
    m.AddColumn(c);
  }
  const int rows = 2 + static_cast<int>(seed % 5);
  for (int i = 0; i < rows; ++i) {
    MilpRow r;
    r.name = "c" + std::to_string(i);
    r.sense = static_cast<RowSense>(i % 3);
    r.rhs = normal(rng) / 3.0;
    for (int j = 0; j < n; ++j) {
      if (coin(rng) != 0) r.coefs.emplace_back(j, normal(rng) * 1e-7 + normal(rng));
    }
    m.AddRow(r);
  }
  return m;
}

}  // namespace mpaudit::testing
