#ifndef MPAUDIT_PLOT_H_
#define MPAUDIT_PLOT_H_

#include <string>
#include <vector>

#include "mpaudit/dataset.h"

namespace mpaudit {

// One row per example, in plotted order.
struct RangePlotRow {
  int example = 0;
  double baseline = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Examples ordered by baseline risk, ties by index.
std::vector<RangePlotRow> RangePlotRows(const Vector& baseline, const Vector& lo,
                                        const Vector& hi);

struct DeviationPlotRow {
  int example = 0;
  double max_deviation = 0.0;
};

// Examples ordered by decreasing deviation, ties by index.
std::vector<DeviationPlotRow> DeviationPlotRows(const Vector& max_deviation);

// Self-contained SVG documents with no timestamps or random ids.
std::string ViableRangeSvg(const std::vector<RangePlotRow>& rows,
                           const std::string& title);
std::string MaxDeviationSvg(const std::vector<DeviationPlotRow>& rows,
                            double delta, const std::string& title);

}  // namespace mpaudit

#endif  // MPAUDIT_PLOT_H_
