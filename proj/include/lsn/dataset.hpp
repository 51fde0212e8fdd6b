#pragma once

// Procedural multi-camera driving scenes and their on-disk format.
//
// Layout of a dataset directory:
//   manifest.txt                          format version, image shape, scene list
//   <scene_id>/frame_<t>_cam_<k>.pgm      binary 8-bit PGM; C planes stacked vertically
//   <scene_id>/annotations.txt            CAM / EGO / SEG lines, floats as %.9g

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lsn/geometry.hpp"
#include "lsn/lane.hpp"
#include "lsn/tensor.hpp"

namespace lsn {

enum class ScenarioKind { kStraight, kCurve, kIntersection };

std::string to_string(ScenarioKind kind);
ScenarioKind parse_scenario_kind(const std::string& text);

/// 8-bit image, values k/255 in [0,1], planar C x H x W.
struct Image {
  std::size_t channels = 1, height = 0, width = 0;
  std::vector<std::uint8_t> pixels;

  Scalar value(std::size_t c, std::size_t y, std::size_t x) const {
    return static_cast<Scalar>(pixels[(c * height + y) * width + x]) / Scalar(255);
  }
  Shape shape() const { return {channels, height, width}; }
  Tensor to_tensor() const;
  friend bool operator==(const Image&, const Image&) = default;
};

struct MultiViewFrame {
  std::vector<Image> images;           // kNumViews, in view_names() order
  std::vector<PinholeCamera> cameras;  // same order
  Pose2 ego_pose;
  std::size_t timestamp = 0;
  friend bool operator==(const MultiViewFrame&, const MultiViewFrame&) = default;
};

struct Scene {
  std::string id;
  ScenarioKind kind = ScenarioKind::kStraight;
  std::uint64_t seed = 0;
  std::vector<MultiViewFrame> frames;
  std::vector<std::vector<LaneSegment>> groundtruth;  // per frame, ego frame
  friend bool operator==(const Scene&, const Scene&) = default;
};

struct SceneParams {
  std::size_t image_channels = 1;
  std::size_t image_height = 64;
  std::size_t image_width = 96;
  std::size_t frames = 4;
  std::size_t points_per_lane = 10;
  BevExtent extent;
  // Sub-samples per pixel side when rasterizing.
  int supersample = 2;
};

std::string scene_id_for_seed(std::uint64_t seed);

/// Fully determined by (seed, kind, params). Floats are already rounded to
/// the on-disk precision so save/load round-trips bit-exactly.
Scene generate_scene(std::uint64_t seed, ScenarioKind kind, const SceneParams& params);

/// `count` scenes with seeds first_seed, first_seed + 1, ...; scenario kinds
/// cycle straight, curve, intersection.
std::vector<Scene> generate_scenes(std::uint64_t first_seed, std::size_t count,
                                   const SceneParams& params);

inline constexpr int kDatasetFormatVersion = 1;

void save_dataset(const std::vector<Scene>& scenes, const std::filesystem::path& dir);
std::vector<Scene> load_dataset(const std::filesystem::path& dir);

/// Rounds to the 9 significant digits used on disk.
double round_to_disk(double v);

}  // namespace lsn
