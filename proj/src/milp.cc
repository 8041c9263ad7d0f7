#include "mpaudit/milp.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "mpaudit/error.h"

namespace mpaudit {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr char kObjectiveRow[] = "OBJ";

void CheckName(const std::string& name) {
  if (name.empty() || name.size() > 8 ||
      name.find_first_of(" \t\r\n") != std::string::npos) {
    throw Error(ErrorCode::kInvalidSpec,
                fmt::format("MPS name '{}' must be 1-8 characters without spaces",
                            name));
  }
}

std::string Num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double ParseNum(const std::string& s, int line) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw Error(ErrorCode::kParseError,
                fmt::format("line {}: bad number '{}'", line, s));
  }
  return v;
}

std::string Line(const std::string& type, const std::string& a,
                 const std::string& b, const std::string& value) {
  std::string s = fmt::format(" {:<2} {:<8}  {:<8}  {:>12}", type, a, b, value);
  while (!s.empty() && s.back() == ' ') s.pop_back();
  return s;
}

}  // namespace

int MilpModel::AddColumn(MilpColumn column) {
  CheckName(column.name);
  if (!std::isfinite(column.lo) || !std::isfinite(column.hi) ||
      column.lo > column.hi) {
    throw Error(ErrorCode::kInvalidBounds,
                fmt::format("column {} needs finite bounds lo <= hi", column.name));
  }
  columns.push_back(std::move(column));
  return static_cast<int>(columns.size()) - 1;
}

int MilpModel::AddRow(MilpRow row) {
  CheckName(row.name);
  std::sort(row.coefs.begin(), row.coefs.end());
  SparseEntries merged;
  for (const auto& [j, a] : row.coefs) {
    if (j < 0 || j >= static_cast<int>(columns.size())) {
      throw Error(ErrorCode::kDimensionMismatch,
                  fmt::format("row {} refers to column {}", row.name, j));
    }
    if (!merged.empty() && merged.back().first == j) {
      merged.back().second += a;
    } else {
      merged.emplace_back(j, a);
    }
  }
  std::erase_if(merged, [](const auto& e) { return e.second == 0.0; });
  row.coefs = std::move(merged);
  rows.push_back(std::move(row));
  return static_cast<int>(rows.size()) - 1;
}

int MilpModel::NumInteger() const {
  return static_cast<int>(std::count_if(columns.begin(), columns.end(),
                                        [](const auto& c) { return c.integer; }));
}

DualSimplex MakeRelaxation(const MilpModel& model) {
  const int n = static_cast<int>(model.columns.size());
  Vector cost(n), lo(n), hi(n);
  const double sense = model.maximize ? -1.0 : 1.0;
  for (int j = 0; j < n; ++j) {
    cost(j) = sense * model.columns[j].objective;
    lo(j) = model.columns[j].lo;
    hi(j) = model.columns[j].hi;
  }
  DualSimplex lp(cost, lo, hi);
  for (const MilpRow& row : model.rows) {
    switch (row.sense) {
      case RowSense::kLe:
        lp.AddRow(row.coefs, -kInf, row.rhs);
        break;
      case RowSense::kGe:
        lp.AddRow(row.coefs, row.rhs, kInf);
        break;
      case RowSense::kEq:
        lp.AddRow(row.coefs, row.rhs, row.rhs);
        break;
    }
  }
  return lp;
}

LpResult LpSolve(const MilpModel& model, const Fixings& fixings) {
  DualSimplex lp = MakeRelaxation(model);
  for (const auto& [j, v] : fixings) {
    if (j < 0 || j >= lp.num_cols()) {
      throw Error(ErrorCode::kDimensionMismatch, fmt::format("no column {}", j));
    }
    const MilpColumn& c = model.columns[j];
    if (v < c.lo || v > c.hi) {
      throw Error(ErrorCode::kInvalidBounds,
                  fmt::format("fixing {} = {} outside its bounds", c.name, v));
    }
    lp.SetColumnBounds(j, v, v);
  }
  LpResult result;
  result.feasible = lp.Solve() == DualSimplex::Status::kOptimal;
  result.iterations = lp.iterations();
  if (result.feasible) {
    result.x = lp.primal();
    result.objective = model.maximize ? -lp.objective() : lp.objective();
  }
  return result;
}

void WriteMps(const MilpModel& model, std::ostream& out) {
  CheckName(model.name);
  for (const auto& c : model.columns) CheckName(c.name);
  for (const auto& r : model.rows) {
    CheckName(r.name);
    if (r.name == kObjectiveRow) {
      throw Error(ErrorCode::kInvalidSpec, "row name OBJ is reserved");
    }
  }

  out << "NAME          " << model.name << '\n';
  out << "OBJSENSE\n    " << (model.maximize ? "MAX" : "MIN") << '\n';
  out << "ROWS\n";
  out << " N  " << kObjectiveRow << '\n';
  for (const auto& r : model.rows) {
    const char* type = r.sense == RowSense::kLe   ? "L"
                       : r.sense == RowSense::kGe ? "G"
                                                  : "E";
    out << ' ' << type << "  " << r.name << '\n';
  }

  // Column-major view of the rows.
  std::vector<std::vector<std::pair<int, double>>> by_col(model.columns.size());
  for (size_t i = 0; i < model.rows.size(); ++i) {
    for (const auto& [j, a] : model.rows[i].coefs) {
      by_col[j].emplace_back(static_cast<int>(i), a);
    }
  }
  out << "COLUMNS\n";
  bool in_marker = false;
  int marker = 0;
  for (size_t j = 0; j < model.columns.size(); ++j) {
    const MilpColumn& c = model.columns[j];
    if (c.integer != in_marker) {
      out << Line("", fmt::format("M{}", marker++), "'MARKER'",
                  c.integer ? "'INTORG'" : "'INTEND'")
          << '\n';
      in_marker = c.integer;
    }
    bool wrote = false;
    if (c.objective != 0.0) {
      out << Line("", c.name, kObjectiveRow, Num(c.objective)) << '\n';
      wrote = true;
    }
    for (const auto& [i, a] : by_col[j]) {
      out << Line("", c.name, model.rows[i].name, Num(a)) << '\n';
      wrote = true;
    }
    if (!wrote) out << Line("", c.name, kObjectiveRow, "0") << '\n';
  }
  if (in_marker) {
    out << Line("", fmt::format("M{}", marker), "'MARKER'", "'INTEND'") << '\n';
  }

  out << "RHS\n";
  for (const auto& r : model.rows) {
    if (r.rhs != 0.0) out << Line("", "RHS", r.name, Num(r.rhs)) << '\n';
  }

  out << "BOUNDS\n";
  for (const auto& c : model.columns) {
    if (c.integer && c.lo == 0.0 && c.hi == 1.0) {
      out << Line("BV", "BND", c.name, "") << '\n';
    } else if (c.lo == c.hi) {
      out << Line("FX", "BND", c.name, Num(c.lo)) << '\n';
    } else {
      out << Line("LO", "BND", c.name, Num(c.lo)) << '\n';
      out << Line("UP", "BND", c.name, Num(c.hi)) << '\n';
    }
  }
  out << "ENDATA\n";
}

void WriteMps(const MilpModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, fmt::format("cannot write '{}'", path));
  WriteMps(model, out);
  if (!out) throw Error(ErrorCode::kIoError, fmt::format("failed writing '{}'", path));
}

MilpModel ReadMps(std::istream& in) {
  MilpModel model;
  model.maximize = false;
  enum class Section { kNone, kName, kObjSense, kRows, kColumns, kRhs, kBounds, kEnd };
  Section section = Section::kNone;
  std::map<std::string, int> row_index;
  std::map<std::string, int> col_index;
  std::string objective_row;
  std::vector<std::map<int, double>> row_coefs;
  std::vector<bool> bounded_lo;
  std::vector<bool> bounded_hi;
  bool integer_block = false;

  auto fail = [](int line, const std::string& what) {
    return Error(ErrorCode::kParseError, fmt::format("line {}: {}", line, what));
  };

  std::string text;
  int line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    if (text.empty() || text[0] == '*') continue;
    std::istringstream ss(text);
    std::vector<std::string> f;
    for (std::string tok; ss >> tok;) f.push_back(tok);
    if (f.empty()) continue;

    if (text[0] != ' ' && text[0] != '\t') {
      const std::string& head = f[0];
      if (head == "NAME") {
        section = Section::kName;
        if (f.size() > 1) model.name = f[1];
      } else if (head == "OBJSENSE") {
        section = Section::kObjSense;
        if (f.size() > 1) model.maximize = f[1] == "MAX" || f[1] == "MAXIMIZE";
      } else if (head == "ROWS") {
        section = Section::kRows;
      } else if (head == "COLUMNS") {
        section = Section::kColumns;
      } else if (head == "RHS") {
        section = Section::kRhs;
      } else if (head == "BOUNDS") {
        section = Section::kBounds;
      } else if (head == "ENDATA") {
        section = Section::kEnd;
        break;
      } else {
        throw fail(line_no, fmt::format("unsupported section '{}'", head));
      }
      continue;
    }

    switch (section) {
      case Section::kObjSense:
        model.maximize = f[0] == "MAX" || f[0] == "MAXIMIZE";
        break;
      case Section::kRows: {
        if (f.size() != 2) throw fail(line_no, "ROWS entry needs type and name");
        if (f[0] == "N") {
          if (objective_row.empty()) objective_row = f[1];
          break;
        }
        MilpRow row;
        row.name = f[1];
        if (f[0] == "L") {
          row.sense = RowSense::kLe;
        } else if (f[0] == "G") {
          row.sense = RowSense::kGe;
        } else if (f[0] == "E") {
          row.sense = RowSense::kEq;
        } else {
          throw fail(line_no, fmt::format("unknown row type '{}'", f[0]));
        }
        row_index[row.name] = static_cast<int>(model.rows.size());
        model.rows.push_back(std::move(row));
        row_coefs.emplace_back();
        break;
      }
      case Section::kColumns: {
        if (f.size() >= 3 && f[1] == "'MARKER'") {
          if (f[2] == "'INTORG'") {
            integer_block = true;
          } else if (f[2] == "'INTEND'") {
            integer_block = false;
          } else {
            throw fail(line_no, "unknown marker");
          }
          break;
        }
        if (f.size() != 3 && f.size() != 5) {
          throw fail(line_no, "COLUMNS entry needs 3 or 5 fields");
        }
        auto [it, inserted] =
            col_index.try_emplace(f[0], static_cast<int>(model.columns.size()));
        if (inserted) {
          MilpColumn c;
          c.name = f[0];
          c.lo = 0.0;
          c.hi = kInf;
          c.integer = integer_block;
          model.columns.push_back(c);
          bounded_lo.push_back(false);
          bounded_hi.push_back(false);
        }
        const int j = it->second;
        for (size_t k = 1; k + 1 < f.size(); k += 2) {
          const double v = ParseNum(f[k + 1], line_no);
          if (f[k] == objective_row) {
            model.columns[j].objective = v;
          } else {
            auto r = row_index.find(f[k]);
            if (r == row_index.end()) {
              throw fail(line_no, fmt::format("unknown row '{}'", f[k]));
            }
            if (v != 0.0) row_coefs[r->second][j] = v;
          }
        }
        break;
      }
      case Section::kRhs: {
        if (f.size() != 3 && f.size() != 5) {
          throw fail(line_no, "RHS entry needs 3 or 5 fields");
        }
        for (size_t k = 1; k + 1 < f.size(); k += 2) {
          auto r = row_index.find(f[k]);
          if (r == row_index.end()) {
            throw fail(line_no, fmt::format("unknown row '{}'", f[k]));
          }
          model.rows[r->second].rhs = ParseNum(f[k + 1], line_no);
        }
        break;
      }
      case Section::kBounds: {
        if (f.size() < 3) throw fail(line_no, "BOUNDS entry too short");
        auto c = col_index.find(f[2]);
        if (c == col_index.end()) {
          throw fail(line_no, fmt::format("unknown column '{}'", f[2]));
        }
        MilpColumn& col = model.columns[c->second];
        const std::string& type = f[0];
        if (type == "BV") {
          col.lo = 0.0;
          col.hi = 1.0;
          col.integer = true;
          break;
        }
        if (f.size() != 4) throw fail(line_no, "bound needs a value");
        const double v = ParseNum(f[3], line_no);
        if (type == "LO") {
          col.lo = v;
        } else if (type == "UP") {
          col.hi = v;
        } else if (type == "FX") {
          col.lo = v;
          col.hi = v;
        } else {
          throw fail(line_no, fmt::format("unsupported bound type '{}'", type));
        }
        break;
      }
      default:
        throw fail(line_no, "data line outside a section");
    }
  }
  if (section != Section::kEnd) {
    throw Error(ErrorCode::kParseError, "missing ENDATA");
  }
  for (const MilpColumn& c : model.columns) {
    if (!std::isfinite(c.lo) || !std::isfinite(c.hi)) {
      throw Error(ErrorCode::kParseError,
                  fmt::format("column {} lacks finite bounds", c.name));
    }
  }
  for (size_t i = 0; i < model.rows.size(); ++i) {
    for (const auto& [j, a] : row_coefs[i]) model.rows[i].coefs.emplace_back(j, a);
  }
  return model;
}

MilpModel ReadMps(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, fmt::format("cannot read '{}'", path));
  return ReadMps(in);
}

}  // namespace mpaudit
