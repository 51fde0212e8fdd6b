#pragma once

// Frames and cameras.
//
// Ego frame: x forward, y left, z up (meters). Camera frame: x right, y down,
// z along the optical axis. A camera's extrinsics give its pose in the ego
// frame: p_ego = rotation * p_cam + translation.

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace lsn {

struct Vec2 {
  double x = 0;
  double y = 0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

struct Vec3 {
  double x = 0;
  double y = 0;
  double z = 0;
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

// Row-major 3x3.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};
  double operator()(int r, int c) const { return m[static_cast<std::size_t>(r * 3 + c)]; }
  friend bool operator==(const Mat3&, const Mat3&) = default;
};

Vec3 operator*(const Mat3& a, const Vec3& v);
Mat3 transpose(const Mat3& a);
double determinant(const Mat3& a);

struct Intrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  std::size_t width = 0, height = 0;
  friend bool operator==(const Intrinsics&, const Intrinsics&) = default;
};

struct PinholeCamera {
  Intrinsics intrinsics;
  Mat3 rotation;
  Vec3 translation;
  friend bool operator==(const PinholeCamera&, const PinholeCamera&) = default;
};

// Camera looking along `yaw` (radians, counter-clockwise from ego x) and
// pitched down by `pitch` radians, mounted at `position`.
PinholeCamera make_camera(const Intrinsics& k, double yaw, double pitch, const Vec3& position);

// Pixel coordinates of an ego-frame point, or nullopt when it lies behind the
// camera or outside the image. Pixel i spans [i, i+1).
std::optional<Vec2> project(const Vec3& point_ego, const PinholeCamera& cam);

// Unit ray (ego frame) through continuous pixel position (u, v).
Vec3 pixel_ray(const PinholeCamera& cam, double u, double v);

inline constexpr std::size_t kNumViews = 7;
const std::array<std::string, kNumViews>& view_names();

// The seven-camera surround rig: front, front-left, front-right, back-left,
// back-right, back, front-center-narrow. All cameras sit on the roof.
std::vector<PinholeCamera> default_rig(std::size_t width, std::size_t height);

/// Planar pose of the ego vehicle in the world.
struct Pose2 {
  double x = 0, y = 0, yaw = 0;
  friend bool operator==(const Pose2&, const Pose2&) = default;
};

Vec2 world_to_ego(const Pose2& ego, const Vec2& world);
Vec2 ego_to_world(const Pose2& ego, const Vec2& local);

/// Rigid planar transform taking previous-frame ego coordinates to
/// current-frame ego coordinates: p_cur = Rot(dyaw) * p_prev + (dx, dy).
struct EgoMotion {
  double dx = 0, dy = 0, dyaw = 0;

  static EgoMotion between(const Pose2& previous, const Pose2& current);
  EgoMotion inverse() const;
  Vec2 apply(const Vec2& p_prev) const;
  Vec2 apply_inverse(const Vec2& p_cur) const;
  bool is_identity() const { return dx == 0 && dy == 0 && dyaw == 0; }
};

/// Metric rectangle of the BEV map, ego-centered.
struct BevExtent {
  double x_min = -24, x_max = 24, y_min = -12, y_max = 12;

  double length_x() const { return x_max - x_min; }
  double length_y() const { return y_max - y_min; }
  bool contains(const Vec2& p) const {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }
  // (u, v) in [0,1]^2 with u along x and v along y.
  Vec2 normalize(const Vec2& p) const {
    return {(p.x - x_min) / length_x(), (p.y - y_min) / length_y()};
  }
  Vec2 denormalize(const Vec2& uv) const {
    return {x_min + uv.x * length_x(), y_min + uv.y * length_y()};
  }
};

/// BEV raster: `cols` cells along x, `rows` cells along y, flattened
/// row-major (index = row * cols + col). Column 0 is at x_min, row 0 at y_min.
struct BevGridSpec {
  BevExtent extent;
  std::size_t rows = 13;
  std::size_t cols = 25;

  std::size_t cells() const { return rows * cols; }
  Vec2 cell_center(std::size_t index) const;
  Vec2 cell_center_normalized(std::size_t index) const;
};

}  // namespace lsn
