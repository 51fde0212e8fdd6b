#include "lsn/dataset.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

#include "lsn/errors.hpp"
#include "lsn/rng.hpp"

namespace lsn {
namespace fs = std::filesystem;

std::string to_string(ScenarioKind kind) {
  switch (kind) {
    case ScenarioKind::kStraight: return "straight";
    case ScenarioKind::kCurve: return "curve";
    case ScenarioKind::kIntersection: return "intersection";
  }
  return "straight";
}

ScenarioKind parse_scenario_kind(const std::string& text) {
  if (text == "straight") return ScenarioKind::kStraight;
  if (text == "curve") return ScenarioKind::kCurve;
  if (text == "intersection") return ScenarioKind::kIntersection;
  throw ValueError("unknown scenario kind: " + text);
}

Tensor Image::to_tensor() const {
  std::vector<Scalar> v(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) v[i] = static_cast<Scalar>(pixels[i]) / Scalar(255);
  return Tensor::from(shape(), std::move(v));
}

double round_to_disk(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

std::string scene_id_for_seed(std::uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%010" PRIu64, seed);
  return buf;
}

namespace {

constexpr double kGround = 0.45;
constexpr double kRoad = 0.30;
constexpr double kMarking = 0.95;
constexpr double kMarkingHalfWidth = 0.12;
constexpr double kCrosswalkHalfWidth = 1.5;
constexpr double kDenseStep = 0.25;
constexpr double kMinSegmentLength = 4.0;

/// A road in the world plane: straight (origin + direction) or a circular arc
/// starting at the origin heading +x. Arc-length s runs along the reference
/// (road center) line; lateral offsets are positive to the left.
struct Road {
  bool straight = true;
  Vec2 origin;
  Vec2 dir{1, 0};
  int turn = 1;         // +1 left, -1 right (arcs only)
  double radius = 0;    // reference radius (arcs only)
  int lanes = 2;
  double lane_width = 3.5;
  double s_min = -80, s_max = 80;

  double half_width() const { return lanes * lane_width / 2; }
  double lane_offset(int i) const { return (i - (lanes - 1) / 2.0) * lane_width; }

  Vec2 point(double s, double lat) const {
    if (straight) {
      return {origin.x + dir.x * s - dir.y * lat, origin.y + dir.y * s + dir.x * lat};
    }
    const double phi = s / radius;
    const double rho = radius - turn * lat;
    return {rho * std::sin(phi), turn * (radius - rho * std::cos(phi))};
  }

  double heading(double s) const {
    if (straight) return std::atan2(dir.y, dir.x);
    return turn * s / radius;
  }

  // (s, lateral) of a world point.
  Vec2 coords(const Vec2& p) const {
    if (straight) {
      const double qx = p.x - origin.x, qy = p.y - origin.y;
      return {qx * dir.x + qy * dir.y, dir.x * qy - dir.y * qx};
    }
    const double qx = p.x, qy = p.y - turn * radius;
    const double rho = std::hypot(qx, qy);
    const double phi = turn > 0 ? std::atan2(qx, -qy) : std::atan2(qx, qy);
    return {phi * radius, turn * (radius - rho)};
  }
};

struct Crosswalk {
  double s = 0;  // along the main road
};

struct World {
  std::vector<Road> roads;  // roads[0] is the ego's road
  std::vector<Crosswalk> crosswalks;
};

double render_point(const World& world, const Vec2& p) {
  double val = kGround;
  for (const Road& r : world.roads) {
    const Vec2 sl = r.coords(p);
    if (sl.x < r.s_min || sl.x > r.s_max) continue;
    if (std::abs(sl.y) <= r.half_width() + kMarkingHalfWidth) {
      val = std::min(val, kRoad);
    }
  }
  for (const Road& r : world.roads) {
    const Vec2 sl = r.coords(p);
    if (sl.x < r.s_min || sl.x > r.s_max) continue;
    for (int b = 0; b <= r.lanes; ++b) {
      const double off = (b - r.lanes / 2.0) * r.lane_width;
      if (std::abs(sl.y - off) > kMarkingHalfWidth) continue;
      const bool edge = b == 0 || b == r.lanes;
      // interior lines are dashed: 3 m on, 3 m off
      if (edge || std::fmod(sl.x + 1000.0, 6.0) < 3.0) return kMarking;
    }
  }
  if (!world.crosswalks.empty()) {
    const Road& main = world.roads.front();
    const Vec2 sl = main.coords(p);
    for (const Crosswalk& cw : world.crosswalks) {
      if (std::abs(sl.x - cw.s) <= kCrosswalkHalfWidth && std::abs(sl.y) <= main.half_width() &&
          std::fmod(sl.y + 1000.0, 1.0) < 0.5) {
        return kMarking;
      }
    }
  }
  return val;
}

Image render_view(const World& world, const PinholeCamera& cam, const Pose2& ego,
                  const SceneParams& params) {
  Image img;
  img.channels = params.image_channels;
  img.height = params.image_height;
  img.width = params.image_width;
  img.pixels.assign(img.channels * img.height * img.width, 0);
  const int ss = std::max(1, params.supersample);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      double acc = 0;
      for (int sy = 0; sy < ss; ++sy) {
        for (int sx = 0; sx < ss; ++sx) {
          const double u = static_cast<double>(x) + (sx + 0.5) / ss;
          const double v = static_cast<double>(y) + (sy + 0.5) / ss;
          const Vec3 ray = pixel_ray(cam, u, v);
          // Only the ground plane is in the scene, so the first hit along
          // the ray is the plane intersection; everything else is sky.
          if (ray.z >= -1e-9) continue;
          const double t = -cam.translation.z / ray.z;
          const Vec2 local{cam.translation.x + t * ray.x, cam.translation.y + t * ray.y};
          acc += render_point(world, ego_to_world(ego, local));
        }
      }
      const double mean = acc / (ss * ss);
      const auto q = static_cast<std::uint8_t>(std::lround(std::clamp(mean, 0.0, 1.0) * 255.0));
      for (std::size_t c = 0; c < img.channels; ++c) img.pixels[(c * img.height + y) * img.width + x] = q;
    }
  }
  return img;
}

struct DenseLane {
  Polyline center, left, right;  // world frame, equal length
  int class_id = kLaneSegment;
};

DenseLane dense_lane(const Road& road, double offset, double s_lo, double s_hi) {
  DenseLane d;
  const double hw = road.lane_width / 2;
  for (double s = s_lo; s <= s_hi + 1e-9; s += kDenseStep) {
    d.center.push_back(road.point(s, offset));
    d.left.push_back(road.point(s, offset + hw));
    d.right.push_back(road.point(s, offset - hw));
  }
  return d;
}

DenseLane dense_crosswalk(const Road& main, double s) {
  DenseLane d;
  d.class_id = kPedestrianCrossing;
  const double hw = main.half_width();
  for (double lat = -hw; lat <= hw + 1e-9; lat += kDenseStep) {
    d.center.push_back(main.point(s, lat));
    // Walking direction is +lateral; its left side is towards -s.
    d.left.push_back(main.point(s - kCrosswalkHalfWidth, lat));
    d.right.push_back(main.point(s + kCrosswalkHalfWidth, lat));
  }
  return d;
}

Vec2 lerp(const Vec2& a, const Vec2& b, double t) {
  return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
}

// Clips a dense lane (already in the ego frame) to the longest run whose three
// polylines are inside the extent, then resamples P points evenly by
// centerline arc length.
bool clip_and_resample(const DenseLane& lane, const BevExtent& extent, std::size_t points,
                       LaneSegment& out) {
  const std::size_t n = lane.center.size();
  std::size_t best_lo = 0, best_len = 0;
  for (std::size_t i = 0; i < n;) {
    auto inside = [&](std::size_t k) {
      return extent.contains(lane.center[k]) && extent.contains(lane.left[k]) &&
             extent.contains(lane.right[k]);
    };
    if (!inside(i)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < n && inside(j)) ++j;
    if (j - i > best_len) {
      best_len = j - i;
      best_lo = i;
    }
    i = j;
  }
  if (best_len < 2) return false;
  std::vector<double> arc(best_len, 0.0);
  for (std::size_t k = 1; k < best_len; ++k) {
    const Vec2& a = lane.center[best_lo + k - 1];
    const Vec2& b = lane.center[best_lo + k];
    arc[k] = arc[k - 1] + std::hypot(b.x - a.x, b.y - a.y);
  }
  const double total = arc.back();
  if (total < kMinSegmentLength) return false;
  out = LaneSegment{};
  out.class_id = lane.class_id;
  out.score = 1.0;
  std::size_t seg = 0;
  for (std::size_t p = 0; p < points; ++p) {
    const double target = total * static_cast<double>(p) / static_cast<double>(points - 1);
    while (seg + 2 < best_len && arc[seg + 1] < target) ++seg;
    const double span = arc[seg + 1] - arc[seg];
    const double t = span > 0 ? std::clamp((target - arc[seg]) / span, 0.0, 1.0) : 0.0;
    const std::size_t a = best_lo + seg, b = best_lo + seg + 1;
    out.centerline.push_back(lerp(lane.center[a], lane.center[b], t));
    out.left_boundary.push_back(lerp(lane.left[a], lane.left[b], t));
    out.right_boundary.push_back(lerp(lane.right[a], lane.right[b], t));
  }
  return true;
}

DenseLane to_ego(const DenseLane& lane, const Pose2& ego) {
  DenseLane d;
  d.class_id = lane.class_id;
  for (std::size_t i = 0; i < lane.center.size(); ++i) {
    d.center.push_back(world_to_ego(ego, lane.center[i]));
    d.left.push_back(world_to_ego(ego, lane.left[i]));
    d.right.push_back(world_to_ego(ego, lane.right[i]));
  }
  return d;
}

void round_polyline(Polyline& line) {
  for (Vec2& p : line) {
    p.x = round_to_disk(p.x);
    p.y = round_to_disk(p.y);
  }
}

std::vector<PinholeCamera> disk_rounded_rig(const SceneParams& params) {
  std::vector<PinholeCamera> rig = default_rig(params.image_width, params.image_height);
  for (PinholeCamera& c : rig) {
    c.intrinsics.fx = round_to_disk(c.intrinsics.fx);
    c.intrinsics.fy = round_to_disk(c.intrinsics.fy);
    c.intrinsics.cx = round_to_disk(c.intrinsics.cx);
    c.intrinsics.cy = round_to_disk(c.intrinsics.cy);
    for (double& v : c.rotation.m) v = round_to_disk(v);
    c.translation = {round_to_disk(c.translation.x), round_to_disk(c.translation.y),
                     round_to_disk(c.translation.z)};
  }
  return rig;
}

}  // namespace

Scene generate_scene(std::uint64_t seed, ScenarioKind kind, const SceneParams& params) {
  if (params.frames < 2) throw ConfigError("scenes need at least 2 frames");
  if (params.points_per_lane < 2) throw ConfigError("lanes need at least 2 points");
  Rng rng(seed ^ 0x5DEECE66DULL);

  World world;
  Road main;
  main.lanes = rng.uniform_int(2, 6);
  main.lane_width = rng.uniform(3.0, 4.0);
  if (kind == ScenarioKind::kCurve) {
    main.straight = false;
    main.turn = rng.uniform() < 0.5 ? 1 : -1;
    main.radius = rng.uniform(60.0, 200.0);
    const double reach = std::min(std::numbers::pi / 2 * main.radius, 90.0);
    main.s_min = -reach;
    main.s_max = reach;
  }
  const int ego_lane = rng.uniform_int(0, main.lanes - 1);
  const double speed = rng.uniform(1.5, 3.0);
  world.roads.push_back(main);

  if (kind == ScenarioKind::kIntersection) {
    Road cross;
    cross.lanes = rng.uniform_int(2, 4);
    cross.lane_width = rng.uniform(3.0, 4.0);
    const double xc = rng.uniform(14.0, 20.0);
    cross.origin = {xc, 0.0};
    cross.dir = {0.0, 1.0};
    cross.s_min = -60;
    cross.s_max = 60;
    world.roads.push_back(cross);
    const double gap = cross.half_width() + kCrosswalkHalfWidth + 1.0;
    world.crosswalks.push_back({xc - gap});
    world.crosswalks.push_back({xc + gap});
  }

  std::vector<DenseLane> lanes;
  for (const Road& r : world.roads) {
    for (int i = 0; i < r.lanes; ++i) {
      lanes.push_back(dense_lane(r, r.lane_offset(i), r.s_min, r.s_max));
    }
  }
  for (const Crosswalk& cw : world.crosswalks) lanes.push_back(dense_crosswalk(main, cw.s));

  Scene scene;
  scene.id = scene_id_for_seed(seed);
  scene.kind = kind;
  scene.seed = seed;
  const std::vector<PinholeCamera> rig = disk_rounded_rig(params);
  const double ego_offset = main.lane_offset(ego_lane);
  for (std::size_t t = 0; t < params.frames; ++t) {
    const double s = speed * static_cast<double>(t);
    const Vec2 pos = main.point(s, ego_offset);
    Pose2 ego{round_to_disk(pos.x), round_to_disk(pos.y), round_to_disk(main.heading(s))};

    MultiViewFrame frame;
    frame.cameras = rig;
    frame.ego_pose = ego;
    frame.timestamp = t;
    for (const PinholeCamera& cam : rig) frame.images.push_back(render_view(world, cam, ego, params));
    scene.frames.push_back(std::move(frame));

    std::vector<LaneSegment> gt;
    for (const DenseLane& lane : lanes) {
      LaneSegment seg;
      if (!clip_and_resample(to_ego(lane, ego), params.extent, params.points_per_lane, seg)) continue;
      round_polyline(seg.centerline);
      round_polyline(seg.left_boundary);
      round_polyline(seg.right_boundary);
      gt.push_back(std::move(seg));
    }
    scene.groundtruth.push_back(std::move(gt));
  }
  return scene;
}

std::vector<Scene> generate_scenes(std::uint64_t first_seed, std::size_t count,
                                   const SceneParams& params) {
  static constexpr ScenarioKind kinds[] = {ScenarioKind::kStraight, ScenarioKind::kCurve,
                                           ScenarioKind::kIntersection};
  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    scenes.push_back(generate_scene(first_seed + i, kinds[i % 3], params));
  }
  return scenes;
}

// ---------------------------------------------------------------------------
// On-disk format

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string frame_image_name(std::size_t t, std::size_t k) {
  return "frame_" + std::to_string(t) + "_cam_" + std::to_string(k) + ".pgm";
}

void write_file(const fs::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out) throw Error("write failed: " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InventoryError("missing file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_pgm(const fs::path& path, const Image& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height * img.channels) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  write_file(path, out);
}

/// Whitespace tokenizer over a whole file that remembers byte offsets.
class Tokens {
 public:
  Tokens(std::string text, fs::path path) : text_(std::move(text)), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& what) const { fail_at(pos_, what); }
  [[noreturn]] void fail_at(std::size_t offset, const std::string& what) const {
    throw ParseError(path_.string() + ": byte " + std::to_string(offset) + ": " + what);
  }

  bool at_end() {
    skip_ws(true);
    return pos_ >= text_.size();
  }
  std::size_t offset() const { return pos_; }

  // Next token on the current line; fails at end of line.
  std::string word() {
    skip_ws(false);
    if (pos_ >= text_.size() || text_[pos_] == '\n') fail("unexpected end of line");
    const std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    return text_.substr(start, pos_ - start);
  }

  double number() {
    skip_ws(false);
    const std::size_t start = pos_;
    const std::string w = word();
    char* end = nullptr;
    const double v = std::strtod(w.c_str(), &end);
    if (end != w.c_str() + w.size() || w.empty()) fail_at(start, "expected a number, got '" + w + "'");
    return v;
  }

  std::uint64_t integer() {
    skip_ws(false);
    const std::size_t start = pos_;
    const std::string w = word();
    if (w.empty() || w.find_first_not_of("0123456789") != std::string::npos) {
      fail_at(start, "expected a non-negative integer, got '" + w + "'");
    }
    return std::stoull(w);
  }

  void expect(const std::string& literal) {
    skip_ws(false);
    const std::size_t start = pos_;
    const std::string w = word();
    if (w != literal) fail_at(start, "expected '" + literal + "', got '" + w + "'");
  }

  void end_line() {
    skip_ws(false);
    if (pos_ < text_.size() && text_[pos_] != '\n') fail("trailing data on line");
    if (pos_ < text_.size()) ++pos_;
  }

  // Raw byte access for binary payloads.
  const std::string& text() const { return text_; }
  void seek(std::size_t p) { pos_ = p; }

 private:
  void skip_ws(bool newlines) {
    for (;;) {
      while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r' ||
                                     (newlines && text_[pos_] == '\n'))) {
        ++pos_;
      }
      if (newlines && pos_ < text_.size() && text_[pos_] == '#') {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
        continue;
      }
      return;
    }
  }

  std::string text_;
  fs::path path_;
  std::size_t pos_ = 0;
};

Image read_pgm(const fs::path& path, std::size_t channels, std::size_t height, std::size_t width) {
  Tokens tk(read_file(path), path);
  tk.expect("P5");
  tk.at_end();
  const std::uint64_t w = tk.integer();
  const std::uint64_t h = tk.integer();
  tk.end_line();
  const std::uint64_t maxval = tk.integer();
  if (maxval != 255) tk.fail("only 8-bit PGM is supported");
  if (w != width || h != height * channels) {
    tk.fail("image is " + std::to_string(w) + "x" + std::to_string(h) + ", manifest says " +
            std::to_string(width) + "x" + std::to_string(height * channels));
  }
  const std::size_t data_start = tk.offset() + 1;  // single whitespace after maxval
  const std::size_t n = channels * height * width;
  if (tk.text().size() < data_start + n) {
    tk.fail_at(tk.text().size(), "truncated pixel data");
  }
  Image img;
  img.channels = channels;
  img.height = height;
  img.width = width;
  img.pixels.assign(tk.text().begin() + static_cast<std::ptrdiff_t>(data_start),
                    tk.text().begin() + static_cast<std::ptrdiff_t>(data_start + n));
  return img;
}

void write_polyline(std::ostringstream& os, const Polyline& line) {
  for (const Vec2& p : line) os << ' ' << fmt(p.x) << ' ' << fmt(p.y);
}

std::string annotations_text(const Scene& scene) {
  std::ostringstream os;
  os << "# scene " << scene.id << "\n";
  const std::vector<PinholeCamera>& cams = scene.frames.front().cameras;
  for (std::size_t k = 0; k < cams.size(); ++k) {
    const PinholeCamera& c = cams[k];
    os << "CAM " << k << ' ' << fmt(c.intrinsics.fx) << ' ' << fmt(c.intrinsics.fy) << ' '
       << fmt(c.intrinsics.cx) << ' ' << fmt(c.intrinsics.cy);
    for (double v : c.rotation.m) os << ' ' << fmt(v);
    os << ' ' << fmt(c.translation.x) << ' ' << fmt(c.translation.y) << ' '
       << fmt(c.translation.z) << "\n";
  }
  for (std::size_t t = 0; t < scene.frames.size(); ++t) {
    const Pose2& e = scene.frames[t].ego_pose;
    os << "EGO " << t << ' ' << fmt(e.x) << ' ' << fmt(e.y) << ' ' << fmt(e.yaw) << "\n";
  }
  for (std::size_t t = 0; t < scene.groundtruth.size(); ++t) {
    for (const LaneSegment& s : scene.groundtruth[t]) {
      os << "SEG " << t << ' ' << s.class_id << ' ' << s.centerline.size();
      write_polyline(os, s.centerline);
      os << " |";
      write_polyline(os, s.left_boundary);
      os << " |";
      write_polyline(os, s.right_boundary);
      os << "\n";
    }
  }
  return os.str();
}

Polyline read_polyline(Tokens& tk, std::size_t n) {
  Polyline line(n);
  for (Vec2& p : line) {
    p.x = tk.number();
    p.y = tk.number();
  }
  return line;
}

void parse_annotations(const fs::path& path, Scene& scene, std::size_t frames, std::size_t width,
                       std::size_t height) {
  Tokens tk(read_file(path), path);
  std::vector<PinholeCamera> cams(kNumViews);
  std::vector<bool> have_cam(kNumViews, false);
  std::vector<bool> have_ego(frames, false);
  scene.frames.assign(frames, MultiViewFrame{});
  scene.groundtruth.assign(frames, {});
  while (!tk.at_end()) {
    const std::size_t line_start = tk.offset();
    const std::string tag = tk.word();
    if (tag == "CAM") {
      const std::uint64_t k = tk.integer();
      if (k >= kNumViews) tk.fail_at(line_start, "camera index out of range");
      PinholeCamera& c = cams[k];
      c.intrinsics.fx = tk.number();
      c.intrinsics.fy = tk.number();
      c.intrinsics.cx = tk.number();
      c.intrinsics.cy = tk.number();
      c.intrinsics.width = width;
      c.intrinsics.height = height;
      for (double& v : c.rotation.m) v = tk.number();
      c.translation.x = tk.number();
      c.translation.y = tk.number();
      c.translation.z = tk.number();
      have_cam[k] = true;
    } else if (tag == "EGO") {
      const std::uint64_t t = tk.integer();
      if (t >= frames) tk.fail_at(line_start, "frame index out of range");
      Pose2& e = scene.frames[t].ego_pose;
      e.x = tk.number();
      e.y = tk.number();
      e.yaw = tk.number();
      have_ego[t] = true;
    } else if (tag == "SEG") {
      const std::uint64_t t = tk.integer();
      if (t >= frames) tk.fail_at(line_start, "frame index out of range");
      LaneSegment s;
      const std::uint64_t cls = tk.integer();
      if (cls >= static_cast<std::uint64_t>(kNumClasses)) tk.fail_at(line_start, "bad class id");
      s.class_id = static_cast<int>(cls);
      const std::uint64_t n = tk.integer();
      if (n < 2 || n > 100000) tk.fail_at(line_start, "bad point count");
      s.centerline = read_polyline(tk, n);
      tk.expect("|");
      s.left_boundary = read_polyline(tk, n);
      tk.expect("|");
      s.right_boundary = read_polyline(tk, n);
      scene.groundtruth[t].push_back(std::move(s));
    } else {
      tk.fail_at(line_start, "unknown record '" + tag + "'");
    }
    tk.end_line();
  }
  for (std::size_t k = 0; k < kNumViews; ++k) {
    if (!have_cam[k]) tk.fail("missing CAM " + std::to_string(k));
  }
  for (std::size_t t = 0; t < frames; ++t) {
    if (!have_ego[t]) tk.fail("missing EGO " + std::to_string(t));
    scene.frames[t].cameras = cams;
    scene.frames[t].timestamp = t;
  }
}

}  // namespace

void save_dataset(const std::vector<Scene>& scenes, const fs::path& dir) {
  if (scenes.empty()) throw ValueError("refusing to write an empty dataset");
  const Image& probe = scenes.front().frames.front().images.front();
  const std::size_t frames = scenes.front().frames.size();
  fs::create_directories(dir);
  std::ostringstream manifest;
  manifest << "lsn-dataset " << kDatasetFormatVersion << "\n";
  manifest << "image " << probe.channels << ' ' << probe.height << ' ' << probe.width << "\n";
  manifest << "frames " << frames << "\n";
  manifest << "scenes " << scenes.size() << "\n";
  for (const Scene& s : scenes) {
    if (s.frames.size() != frames) throw ValueError("scene " + s.id + " has a different frame count");
    manifest << "scene " << s.id << ' ' << to_string(s.kind) << ' ' << s.seed << "\n";
    const fs::path sdir = dir / s.id;
    fs::create_directories(sdir);
    for (std::size_t t = 0; t < s.frames.size(); ++t) {
      const MultiViewFrame& f = s.frames[t];
      if (f.images.size() != kNumViews) throw ValueError("scene " + s.id + " frame lacks 7 views");
      for (std::size_t k = 0; k < f.images.size(); ++k) {
        if (f.images[k].shape() != probe.shape()) {
          throw ValueError("scene " + s.id + " has images of differing shapes");
        }
        write_pgm(sdir / frame_image_name(t, k), f.images[k]);
      }
    }
    write_file(sdir / "annotations.txt", annotations_text(s));
  }
  write_file(dir / "manifest.txt", manifest.str());
}

std::vector<Scene> load_dataset(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.txt";
  Tokens tk(read_file(mpath), mpath);
  tk.expect("lsn-dataset");
  const std::size_t vpos = tk.offset();
  const std::uint64_t version = tk.integer();
  if (version != static_cast<std::uint64_t>(kDatasetFormatVersion)) {
    throw UnsupportedVersionError(mpath.string() + ": byte " + std::to_string(vpos) +
                                  ": unsupported dataset format version " + std::to_string(version) +
                                  " (expected " + std::to_string(kDatasetFormatVersion) + ")");
  }
  tk.end_line();
  tk.expect("image");
  const std::size_t channels = tk.integer();
  const std::size_t height = tk.integer();
  const std::size_t width = tk.integer();
  tk.end_line();
  if (channels == 0 || height == 0 || width == 0) tk.fail("zero image dimension");
  tk.expect("frames");
  const std::size_t frames = tk.integer();
  tk.end_line();
  if (frames < 2) tk.fail("scenes need at least 2 frames");
  tk.expect("scenes");
  const std::size_t count = tk.integer();
  tk.end_line();

  std::vector<Scene> scenes;
  for (std::size_t i = 0; i < count; ++i) {
    if (tk.at_end()) tk.fail("manifest lists fewer scenes than declared");
    tk.expect("scene");
    Scene s;
    s.id = tk.word();
    const std::size_t kpos = tk.offset();
    const std::string kind = tk.word();
    try {
      s.kind = parse_scenario_kind(kind);
    } catch (const ValueError&) {
      tk.fail_at(kpos, "unknown scenario kind '" + kind + "'");
    }
    s.seed = tk.integer();
    tk.end_line();
    const fs::path sdir = dir / s.id;
    if (!fs::is_directory(sdir)) throw InventoryError("missing scene directory: " + sdir.string());
    parse_annotations(sdir / "annotations.txt", s, frames, width, height);
    for (std::size_t t = 0; t < frames; ++t) {
      for (std::size_t k = 0; k < kNumViews; ++k) {
        const fs::path img = sdir / frame_image_name(t, k);
        if (!fs::exists(img)) throw InventoryError("missing camera image: " + img.string());
        s.frames[t].images.push_back(read_pgm(img, channels, height, width));
      }
    }
    scenes.push_back(std::move(s));
  }
  if (!tk.at_end()) tk.fail("manifest has more scenes than declared");
  return scenes;
}

}  // namespace lsn
