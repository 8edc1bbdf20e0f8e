#pragma once

#include <algorithm>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>

#include "msae/masking.hpp"
#include "msae/skeleton.hpp"

namespace msae {

/// Reconstruction figure layout. One panel per frame; every joint is a
/// circle coloured by role: visible joints blue, hidden ground truth grey,
/// predictions for hidden joints red. No other shapes are drawn, so colour
/// counts equal position counts.
struct RenderSpec {
  int frames_per_row = 8;
  double panel_px = 120.0;
  double margin_px = 8.0;
  double joint_radius = 2.0;
  double stroke_width = 0.5;
  std::string reconstructed_color = "red";
  std::string visible_color = "blue";
  std::string masked_color = "grey";
};

inline std::string render_reconstruction_svg(const SkeletonSequence& original, const SkeletonSequence& predicted,
                                             const MaskGrid& hidden, const RenderSpec& spec = {}) {
  double lo_x = std::numeric_limits<double>::infinity(), lo_y = lo_x;
  double hi_x = -lo_x, hi_y = -lo_x;
  auto extend = [&](double x, double y) {
    lo_x = std::min(lo_x, x);
    hi_x = std::max(hi_x, x);
    lo_y = std::min(lo_y, y);
    hi_y = std::max(hi_y, y);
  };
  for (int f = 0; f < original.T; ++f) {
    for (int j = 0; j < original.J; ++j) {
      extend(original.x(f, j), original.y(f, j));
      if (hidden(f, j)) extend(predicted.x(f, j), predicted.y(f, j));
    }
  }
  const double span = std::max({hi_x - lo_x, hi_y - lo_y, 1e-9});
  const double inner = spec.panel_px - 2.0 * spec.margin_px;
  const double unit = inner / span;
  const int cols = std::max(1, std::min(spec.frames_per_row, original.T));
  const int rows = (original.T + cols - 1) / cols;

  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return std::string(buf);
  };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(cols * spec.panel_px) << "\" height=\""
      << fmt(rows * spec.panel_px) << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (int f = 0; f < original.T; ++f) {
    const double ox = (f % cols) * spec.panel_px + spec.margin_px;
    const double oy = (f / cols) * spec.panel_px + spec.margin_px;
    auto px = [&](double x) { return fmt(ox + (x - lo_x) * unit); };
    auto py = [&](double y) { return fmt(oy + (hi_y - y) * unit); };

    svg << "<g id=\"frame-" << f << "\">\n";
    for (int j = 0; j < original.J; ++j) {
      const char* role = hidden(f, j) ? "masked" : "visible";
      const std::string& color = hidden(f, j) ? spec.masked_color : spec.visible_color;
      svg << "<circle class=\"" << role << "\" cx=\"" << px(original.x(f, j)) << "\" cy=\"" << py(original.y(f, j))
          << "\" r=\"" << fmt(spec.joint_radius) << "\" fill=\"" << color << "\" stroke=\"" << color
          << "\" stroke-width=\"" << fmt(spec.stroke_width) << "\"/>\n";
    }
    for (int j = 0; j < original.J; ++j) {
      if (!hidden(f, j)) continue;
      svg << "<circle class=\"reconstructed\" cx=\"" << px(predicted.x(f, j)) << "\" cy=\"" << py(predicted.y(f, j))
          << "\" r=\"" << fmt(spec.joint_radius) << "\" fill=\"" << spec.reconstructed_color << "\" stroke=\""
          << spec.reconstructed_color << "\" stroke-width=\"" << fmt(spec.stroke_width) << "\"/>\n";
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace msae
