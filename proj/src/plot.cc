#include "mpaudit/plot.h"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

namespace mpaudit {
namespace {

constexpr double kWidth = 800.0;
constexpr double kHeight = 420.0;
constexpr double kLeft = 64.0;
constexpr double kRight = 24.0;
constexpr double kTop = 36.0;
constexpr double kBottom = 48.0;

struct Frame {
  int count;

  double X(double rank) const {
    const double span = kWidth - kLeft - kRight;
    return kLeft + span * (count > 1 ? rank / (count - 1) : 0.5);
  }
  // Probability axis, [0, 1] upwards.
  double Y(double p) const {
    return kHeight - kBottom - (kHeight - kTop - kBottom) * p;
  }
};

std::string Escape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

void Open(std::string& svg, const std::string& title) {
  svg += fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0:.0f}\" "
      "height=\"{1:.0f}\" viewBox=\"0 0 {0:.0f} {1:.0f}\" "
      "font-family=\"sans-serif\" font-size=\"12\">\n",
      kWidth, kHeight);
  svg += fmt::format("<rect width=\"{:.0f}\" height=\"{:.0f}\" fill=\"white\"/>\n",
                     kWidth, kHeight);
  svg += fmt::format(
      "<text x=\"{:.1f}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
      kWidth / 2, Escape(title));
}

void Axes(std::string& svg, const Frame& f, const std::string& x_label,
          const std::string& y_label) {
  const double x0 = kLeft, x1 = kWidth - kRight;
  for (int k = 0; k <= 4; ++k) {
    const double p = 0.25 * k;
    svg += fmt::format(
        "<line x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" "
        "stroke=\"#dddddd\"/>\n",
        x0, f.Y(p), x1, f.Y(p));
    svg += fmt::format(
        "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{:.2f}</text>\n",
        x0 - 6, f.Y(p) + 4, p);
  }
  svg += fmt::format(
      "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" "
      "stroke=\"black\"/>\n",
      x0, f.Y(0), x1);
  svg += fmt::format(
      "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\" "
      "stroke=\"black\"/>\n",
      x0, f.Y(0), f.Y(1));
  svg += fmt::format(
      "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{}</text>\n",
      (x0 + x1) / 2, kHeight - 12, Escape(x_label));
  svg += fmt::format(
      "<text x=\"16\" y=\"{0:.2f}\" text-anchor=\"middle\" "
      "transform=\"rotate(-90 16 {0:.2f})\">{1}</text>\n",
      (f.Y(0) + f.Y(1)) / 2, Escape(y_label));
}

}  // namespace

std::vector<RangePlotRow> RangePlotRows(const Vector& baseline, const Vector& lo,
                                        const Vector& hi) {
  std::vector<int> order(baseline.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return baseline(a) < baseline(b); });
  std::vector<RangePlotRow> rows;
  rows.reserve(order.size());
  for (int i : order) rows.push_back({i, baseline(i), lo(i), hi(i)});
  return rows;
}

std::vector<DeviationPlotRow> DeviationPlotRows(const Vector& max_deviation) {
  std::vector<int> order(max_deviation.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return max_deviation(a) > max_deviation(b);
  });
  std::vector<DeviationPlotRow> rows;
  rows.reserve(order.size());
  for (int i : order) rows.push_back({i, max_deviation(i)});
  return rows;
}

std::string ViableRangeSvg(const std::vector<RangePlotRow>& rows,
                           const std::string& title) {
  const Frame f{static_cast<int>(rows.size())};
  std::string svg;
  Open(svg, title);
  Axes(svg, f, "examples, sorted by baseline risk", "predicted risk");
  svg += "<g stroke=\"#4c72b0\" stroke-opacity=\"0.6\">\n";
  for (size_t r = 0; r < rows.size(); ++r) {
    const double x = f.X(static_cast<double>(r));
    svg += fmt::format(
        "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{0:.2f}\" y2=\"{2:.2f}\"/>\n", x,
        f.Y(rows[r].lo), f.Y(rows[r].hi));
  }
  svg += "</g>\n<g fill=\"#dd8452\">\n";
  for (size_t r = 0; r < rows.size(); ++r) {
    svg += fmt::format("<circle cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"1.6\"/>\n",
                       f.X(static_cast<double>(r)), f.Y(rows[r].baseline));
  }
  svg += "</g>\n";
  svg += fmt::format(
      "<text x=\"{:.2f}\" y=\"{:.2f}\" fill=\"#4c72b0\">viable range</text>\n",
      kLeft + 10, kTop + 14);
  svg += fmt::format(
      "<text x=\"{:.2f}\" y=\"{:.2f}\" fill=\"#dd8452\">baseline</text>\n",
      kLeft + 10, kTop + 30);
  svg += "</svg>\n";
  return svg;
}

std::string MaxDeviationSvg(const std::vector<DeviationPlotRow>& rows,
                            double delta, const std::string& title) {
  const Frame f{static_cast<int>(rows.size())};
  std::string svg;
  Open(svg, title);
  // Shade the band of deviations that count as conflicting.
  const double top = f.Y(1.0), cut = f.Y(std::clamp(delta, 0.0, 1.0));
  svg += fmt::format(
      "<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" "
      "fill=\"#c44e52\" fill-opacity=\"0.12\"/>\n",
      kLeft, top, kWidth - kLeft - kRight, cut - top);
  Axes(svg, f, "examples, sorted by maximum deviation",
       "maximum |risk - baseline risk|");
  svg += fmt::format(
      "<line x1=\"{0:.2f}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" "
      "stroke=\"#c44e52\" stroke-dasharray=\"6 4\"/>\n",
      kLeft, cut, kWidth - kRight);
  svg += fmt::format(
      "<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\" "
      "fill=\"#c44e52\">delta = {}</text>\n",
      kWidth - kRight - 4, cut - 6, delta);
  std::string points;
  for (size_t r = 0; r < rows.size(); ++r) {
    points += fmt::format("{}{:.2f},{:.2f}", r ? " " : "",
                          f.X(static_cast<double>(r)), f.Y(rows[r].max_deviation));
  }
  svg += fmt::format(
      "<polyline points=\"{}\" fill=\"none\" stroke=\"#4c72b0\" "
      "stroke-width=\"1.5\"/>\n",
      points);
  svg += "</svg>\n";
  return svg;
}

}  // namespace mpaudit
