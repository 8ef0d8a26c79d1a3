#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "miro/expcli/summary.hpp"

namespace miro::expcli {

struct PlotStyle {
  int width = 800;
  int height = 500;
  int margin_left = 70;
  int margin_right = 220;
  int margin_top = 30;
  int margin_bottom = 55;
  int ticks = 5;
};

struct GroupCurve {
  GroupKey key;
  std::vector<CurvePoint> points;
};

inline std::vector<GroupCurve> group_curves(const Groups& groups) {
  std::vector<GroupCurve> out;
  for (const auto& [key, series] : groups) out.push_back({key, mean_curve(series)});
  return out;
}

namespace detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s(buf);
  if (s == "-0.00") s = "0.00";
  return s;
}

inline std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", std::abs(v) < 1e-12 ? 0.0 : v);
  return buf;
}

inline constexpr std::array<const char*, 8> kPalette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                     "#9467bd", "#8c564b", "#e377c2", "#17becf"};

}  // namespace detail

// Mean episode return per group with a shaded band of one sample std.
inline std::string render_svg(const std::vector<GroupCurve>& curves, const PlotStyle& st = {}) {
  double xmax = 1.0, ymin = 0.0, ymax = 1.0;
  bool first = true;
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      xmax = std::max(xmax, static_cast<double>(p.episode));
      const double lo = p.mean - p.std, hi = p.mean + p.std;
      if (first) {
        ymin = lo;
        ymax = hi;
        first = false;
      }
      ymin = std::min(ymin, lo);
      ymax = std::max(ymax, hi);
    }
  }
  if (ymax - ymin < 1e-9) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  const double x0 = st.margin_left, x1 = st.width - st.margin_right;
  const double y0 = st.height - st.margin_bottom, y1 = st.margin_top;
  auto px = [&](double e) { return x0 + (x1 - x0) * e / xmax; };
  auto py = [&](double r) { return y0 - (y0 - y1) * (r - ymin) / (ymax - ymin); };
  using detail::fmt;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << st.width << "\" height=\""
     << st.height << "\" viewBox=\"0 0 " << st.width << ' ' << st.height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"12\">\n";
  // axes
  os << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(y0) << "\" x2=\"" << fmt(x1) << "\" y2=\""
     << fmt(y0) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << fmt(x0) << "\" y1=\"" << fmt(y0) << "\" x2=\"" << fmt(x0) << "\" y2=\""
     << fmt(y1) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= st.ticks; ++i) {
    const double ex = xmax * i / st.ticks;
    const double ry = ymin + (ymax - ymin) * i / st.ticks;
    os << "<line x1=\"" << fmt(px(ex)) << "\" y1=\"" << fmt(y0) << "\" x2=\"" << fmt(px(ex))
       << "\" y2=\"" << fmt(y0 + 5) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fmt(px(ex)) << "\" y=\"" << fmt(y0 + 18)
       << "\" text-anchor=\"middle\">" << detail::tick_label(std::round(ex * 100) / 100)
       << "</text>\n";
    os << "<line x1=\"" << fmt(x0 - 5) << "\" y1=\"" << fmt(py(ry)) << "\" x2=\"" << fmt(x0)
       << "\" y2=\"" << fmt(py(ry)) << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << fmt(x0 - 8) << "\" y=\"" << fmt(py(ry) + 4)
       << "\" text-anchor=\"end\">" << detail::tick_label(std::round(ry * 100) / 100)
       << "</text>\n";
  }
  os << "<text x=\"" << fmt((x0 + x1) / 2) << "\" y=\"" << fmt(st.height - 12.0)
     << "\" text-anchor=\"middle\">episodes</text>\n";
  os << "<text x=\"16\" y=\"" << fmt((y0 + y1) / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << fmt((y0 + y1) / 2) << ")\">return</text>\n";

  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto& c = curves[i];
    const char* color = detail::kPalette[i % detail::kPalette.size()];
    os << "<g class=\"group\" data-label=\"" << c.key.label() << "\">\n";
    if (!c.points.empty()) {
      os << "<polygon class=\"band\" fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (const auto& p : c.points) os << fmt(px(p.episode)) << ',' << fmt(py(p.mean + p.std)) << ' ';
      for (auto it = c.points.rbegin(); it != c.points.rend(); ++it) {
        os << fmt(px(it->episode)) << ',' << fmt(py(it->mean - it->std)) << ' ';
      }
      os << "\"/>\n";
      os << "<polyline class=\"mean\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (const auto& p : c.points) os << fmt(px(p.episode)) << ',' << fmt(py(p.mean)) << ' ';
      os << "\"/>\n";
    }
    const double ly = st.margin_top + 10 + 20.0 * static_cast<double>(i);
    os << "<line x1=\"" << fmt(x1 + 15) << "\" y1=\"" << fmt(ly) << "\" x2=\"" << fmt(x1 + 40)
       << "\" y2=\"" << fmt(ly) << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << fmt(x1 + 46) << "\" y=\"" << fmt(ly + 4) << "\">" << c.key.label()
       << "</text>\n";
    os << "</g>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

inline void plot(const std::vector<std::string>& paths, const std::string& out_svg) {
  if (paths.empty()) throw ContractError("plot needs at least one metrics file");
  const std::string svg = render_svg(group_curves(group_series(paths)));
  std::ofstream out(out_svg, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + out_svg + "' for writing");
  out << svg;
  if (!out) throw Error("failed writing '" + out_svg + "'");
}

}  // namespace miro::expcli
