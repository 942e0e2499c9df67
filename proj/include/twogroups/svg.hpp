#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace twogroups::svg {

inline std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

// Minimal static chart: one panel with x/y axes, polylines, rectangles and a legend.
class Chart {
public:
  Chart(std::string title, std::string x_label, std::string y_label, double width = 640, double height = 400)
      : title_(std::move(title)), x_label_(std::move(x_label)), y_label_(std::move(y_label)), w_(width), h_(height) {}

  void set_x_range(double lo, double hi) { x0_ = lo, x1_ = hi; }
  void set_y_range(double lo, double hi) { y0_ = lo, y1_ = hi; }
  // Right-hand axis for a second series family drawn in [lo, hi].
  void set_secondary_axis(std::string label, double lo, double hi) {
    y2_label_ = std::move(label);
    y2_0_ = lo;
    y2_1_ = hi;
  }

  void add_line(const std::vector<std::pair<double, double>>& pts, const std::string& color, const std::string& label,
                bool secondary = false) {
    std::ostringstream os;
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& [x, y] : pts) os << num(px(x)) << ',' << num(secondary ? py2(y) : py(y)) << ' ';
    os << "\"/>\n";
    body_ += os.str();
    legend_.emplace_back(color, label);
  }

  void add_points(const std::vector<std::pair<double, double>>& pts, const std::string& color, const std::string& label) {
    std::ostringstream os;
    for (const auto& [x, y] : pts)
      os << "<circle cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y)) << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
    body_ += os.str();
    legend_.emplace_back(color, label);
  }

  // Rectangle from (x_lo, 0) to (x_hi, y) in data units.
  void add_bar(double x_lo, double x_hi, double y, const std::string& color) {
    std::ostringstream os;
    const double top = py(std::max(y, y0_));
    const double base = py(std::max(0.0, y0_));
    os << "<rect x=\"" << num(px(x_lo)) << "\" y=\"" << num(std::min(top, base)) << "\" width=\""
       << num(std::max(0.5, px(x_hi) - px(x_lo))) << "\" height=\"" << num(std::abs(base - top)) << "\" fill=\"" << color
       << "\" fill-opacity=\"0.6\"/>\n";
    body_ += os.str();
  }

  void add_legend_entry(const std::string& color, const std::string& label) { legend_.emplace_back(color, label); }

  void add_hline(double y, const std::string& color, const std::string& label) {
    add_line({{x0_, y}, {x1_, y}}, color, label);
  }

  void add_text(double x, double y, const std::string& text) {
    body_ += "<text x=\"" + num(px(x)) + "\" y=\"" + num(py(y)) + "\" font-size=\"11\" text-anchor=\"middle\">" +
             escape(text) + "</text>\n";
  }

  double width() const { return w_; }
  double height() const { return h_; }

  std::string render(const std::vector<std::string>& header_comments = {}) const {
    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    for (const auto& c : header_comments) os << "<!-- " << escape(c) << " -->\n";
    os << element(0.0, 0.0, true);
    return os.str();
  }

  // The chart as an <svg> element placed at (x, y) inside a parent document.
  std::string element(double x, double y, bool root = false) const {
    std::ostringstream os;
    os << "<svg" << (root ? " xmlns=\"http://www.w3.org/2000/svg\"" : "") << " x=\"" << num(x) << "\" y=\"" << num(y)
       << "\" width=\"" << num(w_) << "\" height=\"" << num(h_) << "\" font-family=\"sans-serif\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << num(w_ / 2) << "\" y=\"20\" font-size=\"14\" text-anchor=\"middle\">" << escape(title_)
       << "</text>\n";
    os << "<line x1=\"" << num(left) << "\" y1=\"" << num(h_ - bottom) << "\" x2=\"" << num(w_ - right) << "\" y2=\""
       << num(h_ - bottom) << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << num(left) << "\" y1=\"" << num(top) << "\" x2=\"" << num(left) << "\" y2=\"" << num(h_ - bottom)
       << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 5; ++i) {
      const double xv = x0_ + (x1_ - x0_) * i / 5.0;
      const double yv = y0_ + (y1_ - y0_) * i / 5.0;
      os << "<text x=\"" << num(px(xv)) << "\" y=\"" << num(h_ - bottom + 15) << "\" font-size=\"10\" text-anchor=\"middle\">"
         << tick(xv) << "</text>\n";
      os << "<text x=\"" << num(left - 5) << "\" y=\"" << num(py(yv) + 3) << "\" font-size=\"10\" text-anchor=\"end\">"
         << tick(yv) << "</text>\n";
      if (!y2_label_.empty()) {
        const double y2 = y2_0_ + (y2_1_ - y2_0_) * i / 5.0;
        os << "<text x=\"" << num(w_ - right + 5) << "\" y=\"" << num(py2(y2) + 3) << "\" font-size=\"10\">" << tick(y2)
           << "</text>\n";
      }
    }
    os << "<text x=\"" << num(w_ / 2) << "\" y=\"" << num(h_ - 8) << "\" font-size=\"12\" text-anchor=\"middle\">"
       << escape(x_label_) << "</text>\n";
    os << "<text x=\"14\" y=\"" << num(h_ / 2) << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
       << num(h_ / 2) << ")\">" << escape(y_label_) << "</text>\n";
    if (!y2_label_.empty())
      os << "<text x=\"" << num(w_ - 10) << "\" y=\"" << num(h_ / 2) << "\" font-size=\"12\" text-anchor=\"middle\" "
         << "transform=\"rotate(90 " << num(w_ - 10) << ' ' << num(h_ / 2) << ")\">" << escape(y2_label_) << "</text>\n";
    os << body_;
    double ly = top + 10;
    for (const auto& [color, label] : legend_) {
      os << "<rect x=\"" << num(w_ - right - 150) << "\" y=\"" << num(ly - 8) << "\" width=\"10\" height=\"10\" fill=\""
         << color << "\"/>\n";
      os << "<text x=\"" << num(w_ - right - 135) << "\" y=\"" << num(ly + 1) << "\" font-size=\"11\">" << escape(label)
         << "</text>\n";
      ly += 15;
    }
    os << "</svg>\n";
    return os.str();
  }

private:
  static constexpr double left = 60, right = 50, top = 35, bottom = 45;

  double px(double x) const { return left + (x - x0_) / (x1_ - x0_) * (w_ - left - right); }
  double py(double y) const { return h_ - bottom - (y - y0_) / (y1_ - y0_) * (h_ - top - bottom); }
  double py2(double y) const { return h_ - bottom - (y - y2_0_) / (y2_1_ - y2_0_) * (h_ - top - bottom); }

  static std::string tick(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", std::abs(v) < 1e-12 ? 0.0 : v);
    return buf;
  }

  std::string title_, x_label_, y_label_, y2_label_;
  double w_, h_;
  double x0_ = 0, x1_ = 1, y0_ = 0, y1_ = 1, y2_0_ = 0, y2_1_ = 1;
  std::string body_;
  std::vector<std::pair<std::string, std::string>> legend_;
};

// Charts stacked vertically in one document.
inline std::string stack(const std::vector<Chart>& charts, const std::vector<std::string>& header_comments = {}) {
  double width = 0.0, height = 0.0;
  for (const auto& c : charts) {
    width = std::max(width, c.width());
    height += c.height();
  }
  std::ostringstream os;
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  for (const auto& c : header_comments) os << "<!-- " << escape(c) << " -->\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(width) << "\" height=\"" << num(height) << "\">\n";
  double y = 0.0;
  for (const auto& c : charts) {
    os << c.element(0.0, y);
    y += c.height();
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace twogroups::svg
