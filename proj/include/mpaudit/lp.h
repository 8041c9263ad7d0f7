#ifndef MPAUDIT_LP_H_
#define MPAUDIT_LP_H_

#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mpaudit/dataset.h"

namespace mpaudit {

using SparseEntries = std::vector<std::pair<int, double>>;

// Bounded-variable dual simplex for
//   minimize c'x  subject to  row_lo <= A x <= row_hi,  col_lo <= x <= col_hi.
// Every column must have finite bounds. Rows are held in the computational
// form A x - r = 0, where the row activity r carries the row bounds, so the
// all-logical basis is dual feasible from the start. Bounds can be changed and
// rows appended between solves; the basis carries over.
class DualSimplex {
 public:
  struct Options {
    double primal_tol = 1e-9;
    double dual_tol = 1e-9;
    double pivot_tol = 1e-9;
    // Pivots between refactorizations of the basis inverse.
    int refactor_interval = 200;
    // Pivot cap for a single Solve call.
    long max_iterations = 1000000;
  };

  enum class Status { kOptimal, kInfeasible };

  DualSimplex(const Vector& cost, const Vector& col_lo, const Vector& col_hi);
  DualSimplex(const Vector& cost, const Vector& col_lo, const Vector& col_hi,
              Options options);

  // Appends lo <= sum coef * x <= hi; lo may be -inf and hi +inf but not both.
  // Returns the row index.
  int AddRow(const SparseEntries& coefs, double lo, double hi);
  void SetColumnBounds(int col, double lo, double hi);

  // Throws NumericalFailure with a condition estimate if the basis degrades.
  Status Solve();

  int num_rows() const { return m_; }
  int num_cols() const { return n_; }
  double col_lo(int j) const { return lo_[j]; }
  double col_hi(int j) const { return hi_[j]; }
  double objective() const;
  Vector primal() const;
  long iterations() const { return iterations_; }
  // Reciprocal condition estimate of the last factorized basis.
  double rcond() const { return rcond_; }

 private:
  enum class VarStatus : unsigned char { kBasic, kAtLower, kAtUpper };

  using RowMajor =
      Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  int total() const { return n_ + m_; }
  bool IsLogical(int j) const { return j >= n_; }
  // Column j of [A, -I] times a dense row vector.
  double RowDot(const Eigen::Ref<const Vector>& rho, int j) const;
  // B^-1 times column j of [A, -I].
  Vector Ftran(int j) const;
  void Refactor();
  void ComputePrimal();
  void ComputeDuals();
  void PlaceNonbasic(int j);
  void Pivot(int row, int entering, const Vector& column);

  Options options_;
  int n_ = 0;
  int m_ = 0;
  std::vector<SparseEntries> cols_;  // Structural columns, scaled rows.
  std::vector<double> row_scale_;
  std::vector<double> cost_;
  std::vector<double> lo_;
  std::vector<double> hi_;
  std::vector<double> x_;
  std::vector<double> d_;
  std::vector<VarStatus> status_;
  std::vector<int> basis_;      // Variable at each basis position.
  std::vector<int> position_;   // Basis position of each variable, or -1.
  RowMajor binv_;
  Vector row_weight_;           // Pricing weights, approximating squared
                                // row norms of binv_.
  int since_refactor_ = 0;
  bool binv_stale_ = true;     // binv_ not yet built for the current rows.
  long iterations_ = 0;
  double rcond_ = 1.0;
};

}  // namespace mpaudit

#endif  // MPAUDIT_LP_H_
