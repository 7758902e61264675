#include <algorithm>
#include <cstdio>
#include <sstream>

#include "dfd/cli.hpp"

namespace dfd::cli {

namespace {

std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
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

constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};

}  // namespace

std::string render_svg(const std::string& title, const std::string& y_label, const std::vector<Series>& series) {
  constexpr double kWidth = 640, kHeight = 400;
  constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;
  const double plot_w = kWidth - kLeft - kRight, plot_h = kHeight - kTop - kBottom;

  std::size_t points = 0;
  double lo = 0, hi = 1;
  bool first = true;
  for (const auto& s : series) {
    points = std::max(points, s.values.size());
    for (double v : s.values) {
      if (first) lo = std::min(0.0, v), hi = v, first = false;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi - lo < 1e-12) hi = lo + 1;
  const double x_max = std::max<double>(2, static_cast<double>(points));
  auto px = [&](double epoch) { return kLeft + (epoch - 1) / (x_max - 1) * plot_w; };
  auto py = [&](double v) { return kTop + (1 - (v - lo) / (hi - lo)) * plot_h; };

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight
     << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
     << escape(title) << "</text>\n";

  // Axes and ticks.
  os << "<g stroke=\"black\" stroke-width=\"1\">\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w << "\" y2=\""
     << kTop + plot_h << "\"/>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kTop + plot_h
     << "\"/>\n</g>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double v = lo + (hi - lo) * i / 5.0;
    os << "<text x=\"" << kLeft - 6 << "\" y=\"" << fixed(py(v) + 4, 1) << "\" text-anchor=\"end\">" << fixed(v, 3)
       << "</text>\n";
  }
  const std::size_t step = std::max<std::size_t>(1, points / 10);
  for (std::size_t e = 1; e <= points; e += step)
    os << "<text x=\"" << fixed(px(static_cast<double>(e)), 1) << "\" y=\"" << kTop + plot_h + 16
       << "\" text-anchor=\"middle\">" << e << "</text>\n";
  os << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 10 << "\" text-anchor=\"middle\">epoch</text>\n";
  os << "<text x=\"16\" y=\"" << kTop + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << kTop + plot_h / 2 << ")\">" << escape(y_label) << "</text>\n</g>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = kColors[k % std::size(kColors)];
    if (!s.values.empty()) {
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (std::size_t i = 0; i < s.values.size(); ++i)
        os << (i ? " " : "") << fixed(px(static_cast<double>(i + 1)), 2) << ',' << fixed(py(s.values[i]), 2);
      os << "\"/>\n";
    }
    const double ly = kTop + 14 + 16 * static_cast<double>(k);
    os << "<line x1=\"" << kLeft + plot_w - 110 << "\" y1=\"" << ly << "\" x2=\"" << kLeft + plot_w - 90
       << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kLeft + plot_w - 84 << "\" y=\"" << ly + 4
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace dfd::cli
