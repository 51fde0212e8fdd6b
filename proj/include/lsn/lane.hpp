#pragma once

#include <vector>

#include "lsn/geometry.hpp"

namespace lsn {

enum LaneClass : int {
  kBackground = 0,
  kLaneSegment = 1,
  kPedestrianCrossing = 2,
};
inline constexpr int kNumClasses = 3;

using Polyline = std::vector<Vec2>;

/// One lane instance in the ego frame (meters). All three polylines carry the
/// same number of points; boundary point i pairs with centerline point i.
struct LaneSegment {
  Polyline centerline;
  Polyline left_boundary;
  Polyline right_boundary;
  int class_id = kLaneSegment;
  double score = 1.0;

  friend bool operator==(const LaneSegment&, const LaneSegment&) = default;
};

}  // namespace lsn
