#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "genxfer/harness.hpp"

namespace genxfer {

namespace {

constexpr double kPanelW = 440;
constexpr double kPanelH = 320;
constexpr double kLeft = 70, kRight = 20, kTop = 36, kBottom = 50;

struct Stats {
  double mean = 0, lo = 0, hi = 0;
};

Stats stats_of(const std::vector<double>& v) {
  Stats s;
  s.lo = *std::min_element(v.begin(), v.end());
  s.hi = *std::max_element(v.begin(), v.end());
  double sum = 0;
  for (double x : v) sum += x;
  s.mean = sum / double(v.size());
  return s;
}

std::string num(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

std::string px(double v) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(2);
  ss << v;
  return ss.str();
}

double safe_log10(double v) { return std::log10(std::max(v, 1e-12)); }

struct Panel {
  std::string metric;
  std::map<Eigen::Index, std::vector<double>> transfer;
  std::vector<double> baseline;
};

}  // namespace

std::string render_plot_svg(const ExperimentResult& result) {
  std::map<std::pair<int, int>, Panel> panels;
  for (const auto& r : result.rows) {
    if (r.status != "ok" || !std::isfinite(r.value)) continue;
    Panel& p = panels[{int(r.family), int(r.mode)}];
    p.metric = r.metric;
    if (r.regime == Regime::transfer) {
      p.transfer[r.n_s].push_back(r.value);
    } else {
      p.baseline.push_back(r.value);
    }
  }
  if (panels.empty()) throw std::invalid_argument("emit_plot: no completed runs to plot");

  const int n_panels = int(panels.size());
  const int cols = std::min(2, n_panels);
  const int rows = (n_panels + cols - 1) / cols;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << px(cols * kPanelW) << "\" height=\""
      << px(rows * kPanelH) << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  svg << "<rect x=\"0\" y=\"0\" width=\"" << px(cols * kPanelW) << "\" height=\"" << px(rows * kPanelH)
      << "\" fill=\"white\"/>\n";

  int index = 0;
  for (const auto& [key, p] : panels) {
    const double ox = (index % cols) * kPanelW;
    const double oy = (index / cols) * kPanelH;
    ++index;

    std::vector<std::pair<Eigen::Index, Stats>> pts;
    for (const auto& [n_s, vals] : p.transfer) pts.emplace_back(n_s, stats_of(vals));
    std::optional<double> base;
    if (!p.baseline.empty()) base = stats_of(p.baseline).mean;

    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (const auto& [n_s, s] : pts) {
      xmin = std::min(xmin, safe_log10(double(n_s)));
      xmax = std::max(xmax, safe_log10(double(n_s)));
      ymin = std::min(ymin, safe_log10(s.lo));
      ymax = std::max(ymax, safe_log10(s.hi));
    }
    if (base) {
      ymin = std::min(ymin, safe_log10(*base));
      ymax = std::max(ymax, safe_log10(*base));
    }
    if (pts.empty()) xmin = 0, xmax = 1;
    if (xmax - xmin < 1e-9) xmin -= 0.1, xmax += 0.1;
    if (ymax - ymin < 1e-9) ymin -= 0.1, ymax += 0.1;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;
    const double xpad = 0.05 * (xmax - xmin);
    xmin -= xpad;
    xmax += xpad;

    const double pw = kPanelW - kLeft - kRight;
    const double ph = kPanelH - kTop - kBottom;
    auto sx = [&](double n) { return ox + kLeft + (safe_log10(n) - xmin) / (xmax - xmin) * pw; };
    auto sy = [&](double v) { return oy + kTop + (ymax - safe_log10(v)) / (ymax - ymin) * ph; };

    const std::string title = to_string(Family(key.first)) + " / " + to_string(Mode(key.second));
    svg << "<g class=\"panel\" data-family=\"" << to_string(Family(key.first)) << "\" data-mode=\""
        << to_string(Mode(key.second)) << "\">\n";
    svg << "<text x=\"" << px(ox + kPanelW / 2) << "\" y=\"" << px(oy + 20)
        << "\" text-anchor=\"middle\" font-size=\"13\">" << title << "</text>\n";
    svg << "<rect x=\"" << px(ox + kLeft) << "\" y=\"" << px(oy + kTop) << "\" width=\"" << px(pw)
        << "\" height=\"" << px(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";

    // Axis ticks: every n_s on x, the extremes on y.
    for (const auto& [n_s, s] : pts) {
      svg << "<text x=\"" << px(sx(double(n_s))) << "\" y=\"" << px(oy + kTop + ph + 14)
          << "\" text-anchor=\"middle\" font-size=\"9\">" << n_s << "</text>\n";
    }
    for (double t : {ymin + ypad, ymax - ypad}) {
      const double v = std::pow(10.0, t);
      svg << "<text x=\"" << px(ox + kLeft - 4) << "\" y=\"" << px(sy(v) + 3)
          << "\" text-anchor=\"end\" font-size=\"9\">" << num(std::round(v * 1e4) / 1e4) << "</text>\n";
    }
    svg << "<text x=\"" << px(ox + kLeft + pw / 2) << "\" y=\"" << px(oy + kPanelH - 10)
        << "\" text-anchor=\"middle\">source sample size n_s (log scale)</text>\n";
    svg << "<text x=\"" << px(ox + 16) << "\" y=\"" << px(oy + kTop + ph / 2)
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 " << px(ox + 16) << " "
        << px(oy + kTop + ph / 2) << ")\">" << p.metric << " (log scale)</text>\n";

    if (pts.size() >= 2) {
      svg << "<polygon class=\"band\" fill=\"#1f77b4\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (const auto& [n_s, s] : pts) svg << px(sx(double(n_s))) << "," << px(sy(s.hi)) << " ";
      for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
        svg << px(sx(double(it->first))) << "," << px(sy(it->second.lo)) << " ";
      }
      svg << "\"/>\n";
      svg << "<polyline class=\"transfer\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
      for (const auto& [n_s, s] : pts) svg << px(sx(double(n_s))) << "," << px(sy(s.mean)) << " ";
      svg << "\"/>\n";
    }
    for (const auto& [n_s, s] : pts) {
      svg << "<circle class=\"marker\" cx=\"" << px(sx(double(n_s))) << "\" cy=\"" << px(sy(s.mean))
          << "\" r=\"3\" fill=\"#1f77b4\" data-n-s=\"" << n_s << "\" data-value=\"" << num(s.mean)
          << "\"/>\n";
    }
    if (base) {
      svg << "<line class=\"baseline\" x1=\"" << px(ox + kLeft) << "\" x2=\"" << px(ox + kLeft + pw)
          << "\" y1=\"" << px(sy(*base)) << "\" y2=\"" << px(sy(*base))
          << "\" stroke=\"red\" stroke-width=\"1.5\" stroke-dasharray=\"6,4\" data-value=\"" << num(*base)
          << "\"/>\n";
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_plot(const ExperimentResult& result, const std::filesystem::path& out) {
  if (result.rows.empty()) throw std::invalid_argument("emit_plot: empty result");
  const std::string svg = render_plot_svg(result);
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + out.string());
  f << svg;
}

}  // namespace genxfer
