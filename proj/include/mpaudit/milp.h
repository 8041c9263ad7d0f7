#ifndef MPAUDIT_MILP_H_
#define MPAUDIT_MILP_H_

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mpaudit/lp.h"

namespace mpaudit {

enum class RowSense { kLe, kGe, kEq };

struct MilpColumn {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
  double objective = 0.0;
  bool integer = false;

  friend bool operator==(const MilpColumn&, const MilpColumn&) = default;
};

struct MilpRow {
  std::string name;
  RowSense sense = RowSense::kLe;
  double rhs = 0.0;
  // (column, coefficient), no zeros, ascending column order.
  SparseEntries coefs;

  friend bool operator==(const MilpRow&, const MilpRow&) = default;
};

// A mixed-integer linear program with finite column bounds. Names are at
// most 8 characters without whitespace so the model fits fixed-format MPS.
struct MilpModel {
  std::string name = "MODEL";
  bool maximize = true;
  std::vector<MilpColumn> columns;
  std::vector<MilpRow> rows;

  int AddColumn(MilpColumn column);
  // Sorts and drops zero coefficients.
  int AddRow(MilpRow row);
  int NumInteger() const;

  friend bool operator==(const MilpModel&, const MilpModel&) = default;
};

using Fixings = std::vector<std::pair<int, double>>;

struct LpResult {
  bool feasible = false;
  // In the model's own sense (maximized value for a maximization model).
  double objective = 0.0;
  Vector x;
  long iterations = 0;
};

// Solves the relaxation with integer columns in their bounds, after fixing
// the listed columns to the given values.
LpResult LpSolve(const MilpModel& model, const Fixings& fixings = {});

// Loads `model` into a fresh solver (minimization form) without solving.
DualSimplex MakeRelaxation(const MilpModel& model);

// Fixed-column MPS. Numbers use the shortest round-trip decimal form, which
// can run past the nominal 12-character field; integer columns sit inside
// MARKER blocks and binaries are written as BV bounds.
void WriteMps(const MilpModel& model, std::ostream& out);
void WriteMps(const MilpModel& model, const std::string& path);
// Accepts whitespace-separated fields. Throws ParseError.
MilpModel ReadMps(std::istream& in);
MilpModel ReadMps(const std::string& path);

}  // namespace mpaudit

#endif  // MPAUDIT_MILP_H_
