#pragma once

// Average precision of predicted lane segments, matched to groundtruth by
// Chamfer distance at several thresholds.

#include <span>
#include <string>
#include <vector>

#include "lsn/dataset.hpp"
#include "lsn/lane.hpp"

namespace lsn {

/// Symmetric mean of nearest-point distances (meters) between the points of
/// two polylines. Throws ValueError when either is empty.
double chamfer_distance(const Polyline& a, const Polyline& b);

/// Predictions and groundtruth of one frame. Matching never crosses frames.
struct FrameLanes {
  std::vector<LaneSegment> predictions;  // scored
  std::vector<LaneSegment> groundtruth;
};

struct ApResult {
  double ap = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
  std::size_t groundtruth = 0;
};

/// Predictions of `class_id` in descending score order are greedily matched
/// to the nearest unmatched groundtruth centerline of the same class and
/// frame with Chamfer distance <= threshold. AP is the area under the
/// all-points interpolated precision-recall curve; 0 without groundtruth.
ApResult average_precision(std::span<const FrameLanes> frames, int class_id, double threshold);
double average_precision(std::span<const LaneSegment> predictions, std::span<const LaneSegment> groundtruth,
                         int class_id, double threshold);

inline const std::vector<double>& default_thresholds() {
  static const std::vector<double> t{0.5, 1.0, 1.5};
  return t;
}

/// Per-frame predictions of one scene, as produced by the model.
struct ScenePredictions {
  std::string scene_id;
  std::vector<std::vector<LaneSegment>> frames;
};

struct ClassThresholdAp {
  int class_id = kLaneSegment;
  double threshold = 0;
  ApResult result;
};

struct SceneDiagnostics {
  std::string scene_id;
  std::size_t groundtruth = 0;
  std::size_t predictions = 0;
  // Fraction of groundtruth whose nearest same-class prediction lies within
  // the largest threshold.
  double covered = 0;
};

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<ClassThresholdAp> entries;  // class-major, then threshold
  // Mean AP over entries whose class has groundtruth in the dataset.
  double map = 0;
  std::vector<SceneDiagnostics> scenes;

  /// Summed over classes at threshold index i.
  std::size_t tp(std::size_t i) const;
  std::size_t fp(std::size_t i) const;
  std::size_t fn(std::size_t i) const;

  /// `key = value` lines in a fixed order.
  std::string to_text() const;
};

/// Scene ids of `predictions` and `groundtruth` must be the same set and
/// frame counts must agree; otherwise InputError lists the offenders.
EvalReport evaluate(const std::vector<ScenePredictions>& predictions, const std::vector<Scene>& groundtruth,
                    const std::vector<double>& thresholds = default_thresholds());

/// Groundtruth as predictions with score 1: the perfect predictor.
std::vector<ScenePredictions> oracle_predictions(const std::vector<Scene>& scenes);

std::string class_name(int class_id);

}  // namespace lsn
