#include "lsn/geometry.hpp"

#include <cmath>
#include <numbers>

namespace lsn {

Vec3 operator*(const Mat3& a, const Vec3& v) {
  return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z,
          a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
          a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
}

Mat3 transpose(const Mat3& a) {
  Mat3 t;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) t.m[static_cast<std::size_t>(r * 3 + c)] = a(c, r);
  }
  return t;
}

double determinant(const Mat3& a) {
  return a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) -
         a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0)) +
         a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
}

PinholeCamera make_camera(const Intrinsics& k, double yaw, double pitch, const Vec3& position) {
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  const Vec3 forward{cp * cy, cp * sy, -sp};
  const Vec3 right{sy, -cy, 0};
  // down = forward x right
  const Vec3 down{forward.y * right.z - forward.z * right.y,
                  forward.z * right.x - forward.x * right.z,
                  forward.x * right.y - forward.y * right.x};
  PinholeCamera cam;
  cam.intrinsics = k;
  // Columns are the camera axes expressed in the ego frame.
  cam.rotation.m = {right.x, down.x, forward.x, right.y, down.y, forward.y,
                    right.z, down.z, forward.z};
  cam.translation = position;
  return cam;
}

std::optional<Vec2> project(const Vec3& point_ego, const PinholeCamera& cam) {
  const Vec3 rel{point_ego.x - cam.translation.x, point_ego.y - cam.translation.y,
                 point_ego.z - cam.translation.z};
  const Vec3 pc = transpose(cam.rotation) * rel;
  if (pc.z <= 0) return std::nullopt;
  const Intrinsics& k = cam.intrinsics;
  const double u = k.fx * pc.x / pc.z + k.cx;
  const double v = k.fy * pc.y / pc.z + k.cy;
  if (!(u >= 0 && u < static_cast<double>(k.width) && v >= 0 &&
        v < static_cast<double>(k.height))) {
    return std::nullopt;
  }
  return Vec2{u, v};
}

Vec3 pixel_ray(const PinholeCamera& cam, double u, double v) {
  const Intrinsics& k = cam.intrinsics;
  const Vec3 dc{(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0};
  const Vec3 d = cam.rotation * dc;
  const double n = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
  return {d.x / n, d.y / n, d.z / n};
}

const std::array<std::string, kNumViews>& view_names() {
  static const std::array<std::string, kNumViews> names{
      "front", "front_left", "front_right", "back_left", "back_right", "back",
      "front_center_narrow"};
  return names;
}

std::vector<PinholeCamera> default_rig(std::size_t width, std::size_t height) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  // Wide cameras: horizontal FOV about 127 deg at the 96-px default width.
  Intrinsics wide{w / 4.0, w / 4.0, w / 2.0, h / 2.0, width, height};
  Intrinsics narrow{w * 0.6, w * 0.6, w / 2.0, h / 2.0, width, height};
  const double pitch = 40 * deg;
  const Vec3 roof{0.0, 0.0, 1.6};
  return {
      make_camera(wide, 0 * deg, pitch, roof),
      make_camera(wide, 60 * deg, pitch, roof),
      make_camera(wide, -60 * deg, pitch, roof),
      make_camera(wide, 120 * deg, pitch, roof),
      make_camera(wide, -120 * deg, pitch, roof),
      make_camera(wide, 180 * deg, pitch, roof),
      make_camera(narrow, 0 * deg, 8 * deg, Vec3{0.5, 0.0, 1.6}),
  };
}

Vec2 world_to_ego(const Pose2& ego, const Vec2& world) {
  const double c = std::cos(ego.yaw), s = std::sin(ego.yaw);
  const double dx = world.x - ego.x, dy = world.y - ego.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

Vec2 ego_to_world(const Pose2& ego, const Vec2& local) {
  const double c = std::cos(ego.yaw), s = std::sin(ego.yaw);
  return {ego.x + c * local.x - s * local.y, ego.y + s * local.x + c * local.y};
}

EgoMotion EgoMotion::between(const Pose2& previous, const Pose2& current) {
  // p_cur = Rot(-yaw_cur) * (Rot(yaw_prev) * p_prev + t_prev - t_cur)
  const Vec2 t = world_to_ego(current, Vec2{previous.x, previous.y});
  return {t.x, t.y, previous.yaw - current.yaw};
}

EgoMotion EgoMotion::inverse() const {
  const double c = std::cos(dyaw), s = std::sin(dyaw);
  // p_prev = Rot(-dyaw) * (p_cur - d)
  return {-(c * dx + s * dy), -(-s * dx + c * dy), -dyaw};
}

Vec2 EgoMotion::apply(const Vec2& p) const {
  const double c = std::cos(dyaw), s = std::sin(dyaw);
  return {c * p.x - s * p.y + dx, s * p.x + c * p.y + dy};
}

Vec2 EgoMotion::apply_inverse(const Vec2& p) const {
  const double c = std::cos(dyaw), s = std::sin(dyaw);
  const double qx = p.x - dx, qy = p.y - dy;
  return {c * qx + s * qy, -s * qx + c * qy};
}

Vec2 BevGridSpec::cell_center(std::size_t index) const {
  return extent.denormalize(cell_center_normalized(index));
}

Vec2 BevGridSpec::cell_center_normalized(std::size_t index) const {
  const std::size_t row = index / cols, col = index % cols;
  return {(static_cast<double>(col) + 0.5) / static_cast<double>(cols),
          (static_cast<double>(row) + 0.5) / static_cast<double>(rows)};
}

}  // namespace lsn
