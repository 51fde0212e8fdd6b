#pragma once

// SVG rendering of top-down lane maps.

#include <string>
#include <vector>

#include "lsn/geometry.hpp"
#include "lsn/lane.hpp"

namespace lsn {

struct VizOptions {
  double score_threshold = 0.3;  // predictions below are not drawn
  double pixels_per_meter = 10;
};

/// Groundtruth panel on the left and, when `predictions` is non-null, the
/// predicted panel on the right. Forward (+x) points up and left (+y) points
/// left; both panels carry metric axes over `extent`.
std::string render_bev_svg(const BevExtent& extent, const std::vector<LaneSegment>& groundtruth,
                           const std::vector<LaneSegment>* predictions, const std::string& title,
                           const VizOptions& opts = {});

}  // namespace lsn
