#pragma once

// Standalone SVG figures. Output depends only on the inputs (fixed number
// formatting, no timestamps), so files can be diffed byte for byte.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atlas/basin.hpp"
#include "atlas/connectivity.hpp"
#include "atlas/error.hpp"
#include "atlas/geometry.hpp"

namespace atlas::svg {

inline std::string num(double v, int prec = 2) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  std::string s = buf;
  if (s == "-0.00" || s == "-0.0" || s == "-0") s.erase(0, 1);
  return s;
}

inline std::string escape(const std::string& s) {
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

/// Piecewise-linear dark blue -> teal -> yellow ramp, t in [0, 1].
inline std::string ramp(double t) {
  static const double stops[3][3] = {{68, 1, 84}, {33, 145, 140}, {253, 231, 37}};
  t = std::clamp(std::isfinite(t) ? t : 0.0, 0.0, 1.0);
  const double s = t * 2.0;
  const int i = std::min(1, static_cast<int>(s));
  const double f = s - i;
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(std::lround(stops[i][0] + f * (stops[i + 1][0] - stops[i][0]))),
                static_cast<int>(std::lround(stops[i][1] + f * (stops[i + 1][1] - stops[i][1]))),
                static_cast<int>(std::lround(stops[i][2] + f * (stops[i + 1][2] - stops[i][2]))));
  return buf;
}

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  return colors[i % 6];
}

inline std::string open(double w, double h, const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(w, 0) + "\" height=\"" + num(h, 0) +
         "\" viewBox=\"0 0 " + num(w, 0) + " " + num(h, 0) + "\" font-family=\"sans-serif\" font-size=\"11\">\n" +
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"" + num(w / 2, 1) +
         "\" y=\"16\" text-anchor=\"middle\" font-size=\"13\">" + escape(title) + "</text>\n";
}

inline std::string close() { return "</svg>\n"; }

struct Frame {
  double left = 60, top = 30, width = 360, height = 260;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;

  double px(double x) const { return left + (x - x0) / (x1 - x0) * width; }
  double py(double y) const { return top + height - (y - y0) / (y1 - y0) * height; }
};

inline std::pair<double, double> padded_range(std::span<const double> v) {
  require(!v.empty(), "svg: empty data");
  double lo = *std::min_element(v.begin(), v.end()), hi = *std::max_element(v.begin(), v.end());
  if (hi == lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

inline std::string axes(const Frame& f, const std::string& xlabel, const std::string& ylabel) {
  std::string s = "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n<rect x=\"" + num(f.left, 1) + "\" y=\"" +
                  num(f.top, 1) + "\" width=\"" + num(f.width, 1) + "\" height=\"" + num(f.height, 1) + "\"/>\n</g>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = f.x0 + (f.x1 - f.x0) * t / 4.0, yv = f.y0 + (f.y1 - f.y0) * t / 4.0;
    s += "<text x=\"" + num(f.px(xv), 1) + "\" y=\"" + num(f.top + f.height + 14, 1) + "\" text-anchor=\"middle\">" +
         num(xv) + "</text>\n";
    s += "<text x=\"" + num(f.left - 4, 1) + "\" y=\"" + num(f.py(yv) + 4, 1) + "\" text-anchor=\"end\">" + num(yv) +
         "</text>\n";
  }
  s += "<text x=\"" + num(f.left + f.width / 2, 1) + "\" y=\"" + num(f.top + f.height + 30, 1) +
       "\" text-anchor=\"middle\">" + escape(xlabel) + "</text>\n";
  s += "<text transform=\"translate(14," + num(f.top + f.height / 2, 1) + ") rotate(-90)\" text-anchor=\"middle\">" +
       escape(ylabel) + "</text>\n";
  return s;
}

/// One rect per matrix entry; models ordered by ascending sort key (stable).
inline std::string heatmap(const DistanceMatrix& d, std::span<const double> sort_key, const std::string& title) {
  const std::size_t n = d.size();
  require(n >= 1, "heatmap: empty matrix");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  if (!sort_key.empty()) {
    require(sort_key.size() == n, "heatmap: sort key length mismatch");
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return sort_key[a] < sort_key[b]; });
  }
  const double hi = std::max(*std::max_element(d.values.begin(), d.values.end()), 1e-300);
  const double cell = std::max(4.0, std::min(24.0, 480.0 / static_cast<double>(n)));
  const double left = 90, top = 30;
  std::string s = open(left + cell * n + 20, top + cell * n + 90, title);
  s += "<g class=\"cells\">\n";
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      s += "<rect class=\"cell\" x=\"" + num(left + cell * b, 2) + "\" y=\"" + num(top + cell * a, 2) + "\" width=\"" +
           num(cell, 2) + "\" height=\"" + num(cell, 2) + "\" fill=\"" + ramp(d(order[a], order[b]) / hi) +
           "\"><title>" + escape(d.ids[order[a]]) + " / " + escape(d.ids[order[b]]) + ": " +
           num(d(order[a], order[b]), 4) + "</title></rect>\n";
  s += "</g>\n";
  for (std::size_t a = 0; a < n; ++a)
    s += "<text x=\"" + num(left - 4, 1) + "\" y=\"" + num(top + cell * (a + 0.5) + 4, 1) + "\" text-anchor=\"end\">" +
         escape(d.ids[order[a]]) + "</text>\n";
  s += "<text x=\"" + num(left, 1) + "\" y=\"" + num(top + cell * n + 20, 1) + "\">" + escape(to_string(d.metric)) +
       " (max " + num(hi, 4) + ")</text>\n";
  return s + close();
}

/// Loss (top) and accuracy (bottom) along each curve.
inline std::string curve_panel(const std::vector<LossCurve>& curves, const std::vector<std::string>& labels,
                               const std::string& title) {
  require(!curves.empty(), "curve_panel: no curves");
  require(labels.size() == curves.size(), "curve_panel: labels length mismatch");
  std::vector<double> all_loss;
  for (const auto& c : curves) all_loss.insert(all_loss.end(), c.losses.begin(), c.losses.end());
  const auto [lo, hi] = padded_range(all_loss);
  Frame top{60, 30, 360, 180, 0, 1, lo, hi};
  Frame bottom{60, 260, 360, 140, 0, 1, 0, 1};
  std::string s = open(560, 450, title);
  s += axes(top, "alpha", "loss");
  s += axes(bottom, "alpha", "accuracy");
  for (std::size_t k = 0; k < curves.size(); ++k) {
    std::string pl, pa;
    for (std::size_t i = 0; i < curves[k].size(); ++i) {
      pl += num(top.px(curves[k].alphas[i])) + "," + num(top.py(curves[k].losses[i])) + " ";
      pa += num(bottom.px(curves[k].alphas[i])) + "," + num(bottom.py(curves[k].accuracies[i])) + " ";
    }
    s += "<polyline class=\"curve\" fill=\"none\" stroke=\"" + std::string(palette(k)) + "\" points=\"" + pl + "\"/>\n";
    s += "<polyline class=\"curve\" fill=\"none\" stroke=\"" + std::string(palette(k)) + "\" points=\"" + pa + "\"/>\n";
    s += "<text x=\"430\" y=\"" + num(40 + 14 * k, 0) + "\" fill=\"" + palette(k) + "\">" + escape(labels[k]) +
         "</text>\n";
  }
  return s + close();
}

/// Stacked histogram with one colour group per cluster label.
inline std::string histogram(std::span<const double> values, std::span<const int> labels, std::size_t bins,
                             const std::string& xlabel, const std::string& title) {
  require(!values.empty(), "histogram: no values");
  require(labels.size() == values.size(), "histogram: labels length mismatch");
  require(bins >= 1, "histogram: bins must be >= 1");
  double lo = *std::min_element(values.begin(), values.end()), hi = *std::max_element(values.begin(), values.end());
  if (hi == lo) hi = lo + 1.0;
  const int groups = *std::max_element(labels.begin(), labels.end()) + 1;
  require(*std::min_element(labels.begin(), labels.end()) >= 0, "histogram: negative label");
  std::vector<std::vector<std::size_t>> counts(static_cast<std::size_t>(groups), std::vector<std::size_t>(bins, 0));
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto b = static_cast<std::size_t>((values[i] - lo) / (hi - lo) * static_cast<double>(bins));
    b = std::min(b, bins - 1);
    ++counts[static_cast<std::size_t>(labels[i])][b];
  }
  std::size_t peak = 1;
  for (std::size_t b = 0; b < bins; ++b) {
    std::size_t tot = 0;
    for (const auto& g : counts) tot += g[b];
    peak = std::max(peak, tot);
  }
  Frame f{60, 30, 360, 260, lo, hi, 0, static_cast<double>(peak)};
  std::string s = open(520, 340, title);
  s += axes(f, xlabel, "count");
  const double bw = (hi - lo) / static_cast<double>(bins);
  for (std::size_t g = 0; g < counts.size(); ++g) {
    s += "<g class=\"cluster-" + std::to_string(g) + "\" fill=\"" + palette(g) + "\">\n";
    for (std::size_t b = 0; b < bins; ++b) {
      if (counts[g][b] == 0) continue;
      std::size_t below = 0;
      for (std::size_t h = 0; h < g; ++h) below += counts[h][b];
      const double y_top = static_cast<double>(below + counts[g][b]);
      s += "<rect x=\"" + num(f.px(lo + bw * b)) + "\" y=\"" + num(f.py(y_top)) + "\" width=\"" +
           num(f.px(lo + bw * (b + 1)) - f.px(lo + bw * b)) + "\" height=\"" +
           num(f.py(static_cast<double>(below)) - f.py(y_top)) + "\"/>\n";
    }
    s += "</g>\n";
    s += "<text x=\"430\" y=\"" + num(40 + 14 * g, 0) + "\" fill=\"" + palette(g) + "\">cluster " + std::to_string(g) +
         "</text>\n";
  }
  return s + close();
}

/// Points plus the least-squares line, annotated with its slope.
inline std::string scatter_fit(std::span<const double> x, std::span<const double> y, std::span<const int> labels,
                               const std::string& xlabel, const std::string& ylabel, const std::string& title) {
  require(x.size() == y.size() && !x.empty(), "scatter: x/y length mismatch");
  require(labels.empty() || labels.size() == x.size(), "scatter: labels length mismatch");
  const auto [x0, x1] = padded_range(x);
  const auto [y0, y1] = padded_range(y);
  Frame f{60, 30, 360, 260, x0, x1, y0, y1};
  std::string s = open(520, 340, title);
  s += axes(f, xlabel, ylabel);
  for (std::size_t i = 0; i < x.size(); ++i)
    s += "<circle class=\"point\" cx=\"" + num(f.px(x[i])) + "\" cy=\"" + num(f.py(y[i])) + "\" r=\"3\" fill=\"" +
         palette(labels.empty() ? 0 : static_cast<std::size_t>(labels[i])) + "\"/>\n";
  const auto fit = x.size() >= 2 ? least_squares_fit(x, y) : std::nullopt;
  if (fit) {
    const double xa = *std::min_element(x.begin(), x.end()), xb = *std::max_element(x.begin(), x.end());
    s += "<line class=\"fit\" x1=\"" + num(f.px(xa)) + "\" y1=\"" + num(f.py(fit->slope * xa + fit->intercept)) +
         "\" x2=\"" + num(f.px(xb)) + "\" y2=\"" + num(f.py(fit->slope * xb + fit->intercept)) +
         "\" stroke=\"black\" stroke-dasharray=\"4 3\"/>\n";
    s += "<text class=\"fit-label\" x=\"430\" y=\"40\">slope " + num(fit->slope) + "</text>\n";
    s += "<text x=\"430\" y=\"54\">intercept " + num(fit->intercept) + "</text>\n";
    if (fit->r) s += "<text x=\"430\" y=\"68\">r " + num(*fit->r) + "</text>\n";
  }
  return s + close();
}

/// Loss over a plane grid (log-scaled colour) with the three anchors marked.
inline std::string plane(const PlaneGrid& g, const std::array<std::string, 3>& anchor_ids, const std::string& title) {
  require(!g.xs.empty() && !g.ys.empty(), "plane: empty grid");
  std::vector<double> logs;
  for (double l : g.losses) logs.push_back(std::log1p(std::max(0.0, l)));
  const double lo = *std::min_element(logs.begin(), logs.end());
  const double hi = std::max(*std::max_element(logs.begin(), logs.end()), lo + 1e-12);
  Frame f{60, 30, 360, 360, g.xs.front(), g.xs.back(), g.ys.front(), g.ys.back()};
  std::string s = open(520, 440, title);
  const double cw = f.width / static_cast<double>(g.xs.size()), ch = f.height / static_cast<double>(g.ys.size());
  s += "<g class=\"cells\">\n";
  for (std::size_t iy = 0; iy < g.ys.size(); ++iy)
    for (std::size_t ix = 0; ix < g.xs.size(); ++ix)
      s += "<rect x=\"" + num(f.left + cw * ix) + "\" y=\"" + num(f.top + f.height - ch * (iy + 1)) + "\" width=\"" +
           num(cw) + "\" height=\"" + num(ch) + "\" fill=\"" + ramp((logs[iy * g.xs.size() + ix] - lo) / (hi - lo)) +
           "\"/>\n";
  s += "</g>\n";
  s += axes(f, "x (units of |p2 - p1|)", "y");
  for (std::size_t a = 0; a < 3; ++a)
    s += "<circle class=\"anchor\" cx=\"" + num(f.px(g.anchors[a].first)) + "\" cy=\"" +
         num(f.py(g.anchors[a].second)) + "\" r=\"4\" fill=\"white\" stroke=\"black\"/>\n<text x=\"" +
         num(f.px(g.anchors[a].first) + 6) + "\" y=\"" + num(f.py(g.anchors[a].second) - 6) + "\">" +
         escape(anchor_ids[a]) + "</text>\n";
  return s + close();
}

}  // namespace atlas::svg
