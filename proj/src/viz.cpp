#include "lsn/viz.hpp"

#include <cmath>
#include <cstdio>

namespace lsn {
namespace {

constexpr double kMargin = 40;  // room for tick labels
constexpr double kGap = 30;
constexpr double kTitle = 24;
constexpr double kTickMeters = 6;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
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

const char* class_color(int class_id) {
  return class_id == kPedestrianCrossing ? "#e07b00" : "#1f5fbf";
}

struct Panel {
  const BevExtent& e;
  double s, left, top;

  double sx(const Vec2& p) const { return left + (e.y_max - p.y) * s; }
  double sy(const Vec2& p) const { return top + (e.x_max - p.x) * s; }
  double width() const { return e.length_y() * s; }
  double height() const { return e.length_x() * s; }

  std::string polyline(const Polyline& l, const char* color, double w, const char* dash) const {
    std::string pts;
    for (const Vec2& p : l) pts += (pts.empty() ? "" : " ") + num(sx(p)) + "," + num(sy(p));
    std::string out = "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"" + num(w) +
                      "\" points=\"" + pts + "\"";
    if (dash) out += " stroke-dasharray=\"" + std::string(dash) + "\"";
    return out + "/>\n";
  }

  std::string frame(const std::string& label) const {
    std::string out = "<g class=\"panel\">\n";
    out += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(width()) + "\" height=\"" +
           num(height()) + "\" fill=\"#f7f7f7\" stroke=\"#333\"/>\n";
    out += "<text x=\"" + num(left + width() / 2) + "\" y=\"" + num(top - 8) +
           "\" text-anchor=\"middle\" font-size=\"13\">" + escape(label) + "</text>\n";
    for (double x = std::ceil(e.x_min / kTickMeters) * kTickMeters; x <= e.x_max; x += kTickMeters) {
      const double y = sy({x, 0});
      out += "<line x1=\"" + num(left - 4) + "\" y1=\"" + num(y) + "\" x2=\"" + num(left) + "\" y2=\"" + num(y) +
             "\" stroke=\"#333\"/>\n";
      out += "<text x=\"" + num(left - 6) + "\" y=\"" + num(y + 4) +
             "\" text-anchor=\"end\" font-size=\"10\">" + tick(x) + "</text>\n";
    }
    for (double yv = std::ceil(e.y_min / kTickMeters) * kTickMeters; yv <= e.y_max; yv += kTickMeters) {
      const double x = sx({0, yv});
      const double b = top + height();
      out += "<line x1=\"" + num(x) + "\" y1=\"" + num(b) + "\" x2=\"" + num(x) + "\" y2=\"" + num(b + 4) +
             "\" stroke=\"#333\"/>\n";
      out += "<text x=\"" + num(x) + "\" y=\"" + num(b + 15) + "\" text-anchor=\"middle\" font-size=\"10\">" +
             tick(yv) + "</text>\n";
    }
    out += "<text x=\"" + num(left + width() / 2) + "\" y=\"" + num(top + height() + 30) +
           "\" text-anchor=\"middle\" font-size=\"10\">y (m, left positive)</text>\n";
    out += "<text x=\"" + num(left - 28) + "\" y=\"" + num(top + height() / 2) + "\" transform=\"rotate(-90 " +
           num(left - 28) + " " + num(top + height() / 2) +
           ")\" text-anchor=\"middle\" font-size=\"10\">x (m, forward)</text>\n";
    // ego vehicle
    out += "<circle cx=\"" + num(sx({0, 0})) + "\" cy=\"" + num(sy({0, 0})) + "\" r=\"3\" fill=\"#c00\"/>\n";
    return out;
  }

  std::string lanes(const std::vector<LaneSegment>& segs, double min_score) const {
    std::string out;
    for (const LaneSegment& l : segs) {
      if (l.score < min_score) continue;
      out += "<g class=\"lane\" data-class=\"" + std::to_string(l.class_id) + "\">\n";
      out += polyline(l.left_boundary, "#888", 1, "4,3");
      out += polyline(l.right_boundary, "#888", 1, "4,3");
      out += polyline(l.centerline, class_color(l.class_id), 2, nullptr);
      out += "</g>\n";
    }
    return out;
  }
};

}  // namespace

std::string render_bev_svg(const BevExtent& extent, const std::vector<LaneSegment>& groundtruth,
                           const std::vector<LaneSegment>* predictions, const std::string& title,
                           const VizOptions& opts) {
  const double s = opts.pixels_per_meter;
  const Panel gt{extent, s, kMargin, kMargin + kTitle};
  const Panel pr{extent, s, kMargin + gt.width() + kGap + kMargin, kMargin + kTitle};
  const double width = (predictions ? pr.left + pr.width() : gt.left + gt.width()) + kMargin;
  const double height = gt.top + gt.height() + kMargin + 10;

  std::string out = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
         "\" viewBox=\"0 0 " + num(width) + " " + num(height) + "\">\n";
  out += "<text x=\"" + num(kMargin) + "\" y=\"20\" font-size=\"15\">" + escape(title) + "</text>\n";
  out += gt.frame("Groundtruth");
  out += gt.lanes(groundtruth, -INFINITY);
  out += "</g>\n";
  if (predictions) {
    char label[64];
    std::snprintf(label, sizeof label, "Prediction (score >= %.2f)", opts.score_threshold);
    out += pr.frame(label);
    out += pr.lanes(*predictions, opts.score_threshold);
    out += "</g>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace lsn
