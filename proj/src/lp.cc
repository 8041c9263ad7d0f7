#include "mpaudit/lp.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "mpaudit/error.h"

namespace mpaudit {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMinRcond = 1e-13;

}  // namespace

DualSimplex::DualSimplex(const Vector& cost, const Vector& col_lo,
                         const Vector& col_hi)
    : DualSimplex(cost, col_lo, col_hi, Options{}) {}

DualSimplex::DualSimplex(const Vector& cost, const Vector& col_lo,
                         const Vector& col_hi, Options options)
    : options_(options), n_(static_cast<int>(cost.size())) {
  if (col_lo.size() != n_ || col_hi.size() != n_) {
    throw Error(ErrorCode::kDimensionMismatch, "bound vectors differ from cost");
  }
  cols_.resize(n_);
  for (int j = 0; j < n_; ++j) {
    if (!std::isfinite(col_lo(j)) || !std::isfinite(col_hi(j)) ||
        col_lo(j) > col_hi(j)) {
      throw Error(ErrorCode::kInvalidBounds,
                  fmt::format("column {} needs finite bounds lo <= hi", j));
    }
    cost_.push_back(cost(j));
    lo_.push_back(col_lo(j));
    hi_.push_back(col_hi(j));
    d_.push_back(cost(j));
    const bool upper = cost(j) < 0.0;
    status_.push_back(upper ? VarStatus::kAtUpper : VarStatus::kAtLower);
    x_.push_back(upper ? col_hi(j) : col_lo(j));
    position_.push_back(-1);
  }
}

int DualSimplex::AddRow(const SparseEntries& coefs, double lo, double hi) {
  if (std::isnan(lo) || std::isnan(hi) || lo > hi || lo == kInf ||
      hi == -kInf || (lo == -kInf && hi == kInf)) {
    throw Error(ErrorCode::kInvalidBounds, "row bounds must satisfy lo <= hi");
  }
  double scale = 0.0;
  for (const auto& [j, a] : coefs) {
    if (j < 0 || j >= n_) {
      throw Error(ErrorCode::kDimensionMismatch,
                  fmt::format("row refers to column {}", j));
    }
    if (!std::isfinite(a)) {
      throw Error(ErrorCode::kNumericalFailure, "row coefficient not finite");
    }
    scale = std::max(scale, std::abs(a));
  }
  scale = scale > 0.0 ? 1.0 / scale : 1.0;

  const int row = m_;
  Vector u = Vector::Zero(m_);
  double activity = 0.0;
  for (const auto& [j, a] : coefs) {
    if (a == 0.0) continue;
    const double v = a * scale;
    cols_[j].emplace_back(row, v);
    activity += v * x_[j];
    if (position_[j] >= 0) u(position_[j]) += v;
  }

  // Extend the basis with the new row activity: for B' = [B 0; u' -1],
  // B'^-1 = [B^-1 0; u' B^-1 -1]. Rows added before any solve are batched
  // into one Refactor instead.
  if (!binv_stale_) {
    RowMajor grown(m_ + 1, m_ + 1);
    grown.setZero();
    if (m_ > 0) {
      grown.topLeftCorner(m_, m_) = binv_;
      grown.row(m_).head(m_) = u.transpose() * binv_;
    }
    grown(m_, m_) = -1.0;
    binv_.swap(grown);
    row_weight_.conservativeResize(m_ + 1);
    row_weight_(m_) = binv_.row(m_).squaredNorm();
  }

  const int var = n_ + m_;
  row_scale_.push_back(scale);
  cost_.push_back(0.0);
  lo_.push_back(lo * scale);
  hi_.push_back(hi * scale);
  x_.push_back(activity);
  d_.push_back(0.0);
  status_.push_back(VarStatus::kBasic);
  position_.push_back(m_);
  basis_.push_back(var);
  ++m_;
  return row;
}

void DualSimplex::SetColumnBounds(int col, double lo, double hi) {
  if (col < 0 || col >= n_) {
    throw Error(ErrorCode::kDimensionMismatch, fmt::format("no column {}", col));
  }
  if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi) {
    throw Error(ErrorCode::kInvalidBounds, "column bounds must be finite, lo <= hi");
  }
  lo_[col] = lo;
  hi_[col] = hi;
  if (status_[col] != VarStatus::kBasic) PlaceNonbasic(col);
}

void DualSimplex::PlaceNonbasic(int j) {
  const bool lower_finite = std::isfinite(lo_[j]);
  const bool upper_finite = std::isfinite(hi_[j]);
  bool upper;
  if (d_[j] > options_.dual_tol) {
    upper = !lower_finite;
  } else if (d_[j] < -options_.dual_tol) {
    upper = upper_finite;
  } else {
    upper = status_[j] == VarStatus::kAtUpper ? upper_finite : !lower_finite;
  }
  status_[j] = upper ? VarStatus::kAtUpper : VarStatus::kAtLower;
  x_[j] = upper ? hi_[j] : lo_[j];
}

double DualSimplex::RowDot(const Eigen::Ref<const Vector>& rho, int j) const {
  if (IsLogical(j)) return -rho(j - n_);
  double s = 0.0;
  for (const auto& [i, a] : cols_[j]) s += rho(i) * a;
  return s;
}

Vector DualSimplex::Ftran(int j) const {
  if (IsLogical(j)) return -binv_.col(j - n_);
  Vector out = Vector::Zero(m_);
  for (const auto& [i, a] : cols_[j]) out += a * binv_.col(i);
  return out;
}

void DualSimplex::Refactor() {
  // With structural basics S and logical basics covering rows L, the rows R
  // not covered by a logical satisfy A[R,S] x_S = b_R, and the logical rows
  // give x_L = A[L,S] x_S - b_L. Only the |S| x |S| block A[R,S] needs an LU.
  std::vector<int> structural;  // basis positions
  std::vector<int> row_slot(m_, -1);
  for (int p = 0; p < m_; ++p) {
    if (IsLogical(basis_[p])) {
      row_slot[basis_[p] - n_] = -2;
    } else {
      structural.push_back(p);
    }
  }
  const int k = static_cast<int>(structural.size());
  std::vector<int> free_rows;
  for (int i = 0; i < m_; ++i) {
    if (row_slot[i] != -2) {
      row_slot[i] = static_cast<int>(free_rows.size());
      free_rows.push_back(i);
    }
  }
  binv_.setZero(m_, m_);
  rcond_ = 1.0;
  Eigen::MatrixXd core_inv(k, k);
  if (k > 0) {
    Eigen::MatrixXd core = Eigen::MatrixXd::Zero(k, k);
    for (int c = 0; c < k; ++c) {
      for (const auto& [i, a] : cols_[basis_[structural[c]]]) {
        if (row_slot[i] >= 0) core(row_slot[i], c) = a;
      }
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(core);
    rcond_ = lu.rcond();
    if (!(rcond_ > kMinRcond)) {
      throw Error(ErrorCode::kNumericalFailure,
                  fmt::format("basis is near singular (condition estimate {:.3e})",
                              1.0 / rcond_));
    }
    core_inv = lu.inverse();
    for (int c = 0; c < k; ++c) {
      for (int r = 0; r < k; ++r) binv_(structural[c], free_rows[r]) = core_inv(c, r);
    }
  }
  // Entries of A[L,S], grouped by row.
  std::vector<std::vector<std::pair<int, double>>> coupling(m_);
  for (int c = 0; c < k; ++c) {
    for (const auto& [i, a] : cols_[basis_[structural[c]]]) {
      if (row_slot[i] == -2) coupling[i].emplace_back(c, a);
    }
  }
  for (int p = 0; p < m_; ++p) {
    const int j = basis_[p];
    if (!IsLogical(j)) continue;
    const int row = j - n_;
    binv_(p, row) = -1.0;
    if (coupling[row].empty()) continue;
    Eigen::RowVectorXd coupled = Eigen::RowVectorXd::Zero(k);
    for (const auto& [c, a] : coupling[row]) coupled += a * core_inv.row(c);
    for (int r = 0; r < k; ++r) binv_(p, free_rows[r]) = coupled(r);
  }
  row_weight_ = binv_.rowwise().squaredNorm();
  binv_stale_ = false;
  since_refactor_ = 0;
}

void DualSimplex::ComputePrimal() {
  Vector rhs = Vector::Zero(m_);
  for (int j = 0; j < total(); ++j) {
    if (status_[j] == VarStatus::kBasic || x_[j] == 0.0) continue;
    if (IsLogical(j)) {
      rhs(j - n_) += x_[j];
    } else {
      for (const auto& [i, a] : cols_[j]) rhs(i) -= a * x_[j];
    }
  }
  const Vector xb = binv_ * rhs;
  for (int p = 0; p < m_; ++p) x_[basis_[p]] = xb(p);
}

void DualSimplex::ComputeDuals() {
  Vector cb(m_);
  for (int p = 0; p < m_; ++p) cb(p) = cost_[basis_[p]];
  const Vector y = binv_.transpose() * cb;
  for (int j = 0; j < total(); ++j) {
    d_[j] = status_[j] == VarStatus::kBasic ? 0.0 : cost_[j] - RowDot(y, j);
  }
}

void DualSimplex::Pivot(int row, int entering, const Vector& column) {
  const double pivot = column(row);
  binv_.row(row) /= pivot;
  const double pivot_weight = row_weight_(row) / (pivot * pivot);
  for (int i = 0; i < m_; ++i) {
    if (i == row || column(i) == 0.0) continue;
    binv_.row(i) -= column(i) * binv_.row(row);
    // Devex-style bound on the new squared row norm; exact again at refactor.
    const double ratio = column(i);
    row_weight_(i) = std::max(row_weight_(i), ratio * ratio * pivot_weight);
  }
  row_weight_(row) = std::max(pivot_weight, 1e-12);
  const int leaving = basis_[row];
  position_[leaving] = -1;
  basis_[row] = entering;
  position_[entering] = row;
  status_[entering] = VarStatus::kBasic;
}

DualSimplex::Status DualSimplex::Solve() {
  if (m_ == 0) {
    for (int j = 0; j < n_; ++j) PlaceNonbasic(j);
    return Status::kOptimal;
  }
  if (binv_stale_ || since_refactor_ >= options_.refactor_interval) Refactor();
  ComputeDuals();
  for (int j = 0; j < total(); ++j) {
    if (status_[j] != VarStatus::kBasic) PlaceNonbasic(j);
  }
  ComputePrimal();

  std::vector<double> alpha(total());
  std::vector<int> eligible;
  for (long pivots = 0;; ++pivots) {
    if (pivots >= options_.max_iterations) {
      throw Error(ErrorCode::kNumericalFailure,
                  fmt::format("simplex iteration limit {} reached",
                              options_.max_iterations));
    }
    // Leaving row: largest squared infeasibility over the row weight.
    int r = -1;
    double best = 0.0;
    for (int p = 0; p < m_; ++p) {
      const int j = basis_[p];
      double infeas = 0.0;
      if (x_[j] < lo_[j] - options_.primal_tol) {
        infeas = lo_[j] - x_[j];
      } else if (x_[j] > hi_[j] + options_.primal_tol) {
        infeas = x_[j] - hi_[j];
      }
      if (infeas == 0.0) continue;
      const double score = infeas * infeas / row_weight_(p);
      if (score > best) {
        best = score;
        r = p;
      }
    }
    if (r < 0) return Status::kOptimal;

    const int leaving = basis_[r];
    const bool below = x_[leaving] < lo_[leaving];
    const Vector rho = binv_.row(r).transpose();

    // Harris two-pass ratio test.
    eligible.clear();
    double t_max = kInf;
    for (int j = 0; j < total(); ++j) {
      if (status_[j] == VarStatus::kBasic) continue;
      alpha[j] = RowDot(rho, j);
      if (lo_[j] == hi_[j]) continue;
      const double a = below ? -alpha[j] : alpha[j];
      const bool at_lower = status_[j] == VarStatus::kAtLower;
      if (!(at_lower ? a > options_.pivot_tol : a < -options_.pivot_tol)) {
        continue;
      }
      eligible.push_back(j);
      const double dj = std::max(0.0, at_lower ? d_[j] : -d_[j]);
      t_max = std::min(t_max, (dj + options_.dual_tol) / std::abs(a));
    }
    if (eligible.empty()) return Status::kInfeasible;
    int q = -1;
    double q_size = 0.0;
    for (int j : eligible) {
      const double a = std::abs(alpha[j]);
      const bool at_lower = status_[j] == VarStatus::kAtLower;
      const double dj = std::max(0.0, at_lower ? d_[j] : -d_[j]);
      if (dj / a <= t_max && a > q_size) {
        q = j;
        q_size = a;
      }
    }

    const Vector column = Ftran(q);
    const double alpha_rq = column(r);
    if (std::abs(alpha_rq - alpha[q]) > 1e-7 * (1.0 + std::abs(alpha[q])) &&
        since_refactor_ > 0) {
      Refactor();
      ComputePrimal();
      ComputeDuals();
      continue;
    }

    const double target = below ? lo_[leaving] : hi_[leaving];
    const double theta_p = (x_[leaving] - target) / alpha_rq;
    for (int p = 0; p < m_; ++p) x_[basis_[p]] -= theta_p * column(p);
    x_[q] += theta_p;
    x_[leaving] = target;

    const double theta_d = d_[q] / alpha_rq;
    for (int j = 0; j < total(); ++j) {
      if (status_[j] != VarStatus::kBasic) d_[j] -= theta_d * alpha[j];
    }
    d_[q] = 0.0;
    d_[leaving] = -theta_d;

    Pivot(r, q, column);
    status_[leaving] = below ? VarStatus::kAtLower : VarStatus::kAtUpper;
    ++iterations_;
    if (++since_refactor_ >= options_.refactor_interval) {
      Refactor();
      ComputePrimal();
      ComputeDuals();
    }
  }
}

double DualSimplex::objective() const {
  double s = 0.0;
  for (int j = 0; j < n_; ++j) s += cost_[j] * x_[j];
  return s;
}

Vector DualSimplex::primal() const {
  Vector out(n_);
  for (int j = 0; j < n_; ++j) out(j) = x_[j];
  return out;
}

}  // namespace mpaudit
