#pragma once

// Prediction head (query -> lane segment), set matching and the training loss.

#include <span>
#include <string>
#include <vector>

#include "lsn/lane.hpp"
#include "lsn/lane_decoder.hpp"
#include "lsn/layers.hpp"

namespace lsn {

struct HeadConfig {
  std::size_t dim = 32;
  std::size_t points_per_lane = 10;
  BevExtent extent;
  // Half-width (m) decoded when the width output is zero.
  double half_width_prior = 1.75;
};

/// Differentiable head outputs for one query set. Geometry is metric, ego
/// frame: [N_q, P, 2] per polyline.
struct LaneOutputs {
  Tensor logits;  // [N_q, kNumClasses]
  Tensor centerline, left, right;
};

class PredictionHead {
 public:
  PredictionHead() = default;
  PredictionHead(const HeadConfig& cfg, ParameterStore& params, Rng& rng,
                 const std::string& name = "head");

  /// Centerline point i is sigmoid(ref_logits + delta_i) mapped onto the
  /// extent; boundaries sit at +-width_i along the centerline's left normal.
  LaneOutputs forward(Tape& tape, const LaneQuerySet& q) const;

  const HeadConfig& config() const { return cfg_; }

  Linear classifier;     // D -> classes
  FeedForward geometry;  // D -> D -> P * 3 (P (dx, dy) logit deltas, then P widths)

 private:
  HeadConfig cfg_;
};

/// Softmax of each row of [N, C] logits.
std::vector<std::vector<double>> class_probabilities(const Tensor& logits);

/// One LaneSegment per query: class is the most likely foreground class and
/// score its probability.
std::vector<LaneSegment> predict(const LaneOutputs& out);

struct MatchResult {
  std::vector<std::size_t> assignment;  // groundtruth index -> prediction index
  double total_cost = 0;
};

/// Minimum-cost injective assignment of rows (groundtruth) to columns
/// (predictions) of a row-major [rows, cols] cost matrix.
MatchResult hungarian_match(std::span<const double> cost, std::size_t rows, std::size_t cols);
MatchResult hungarian_match(const Tensor& cost);

struct LossWeights {
  double cls = 2.0;
  double pts = 5.0;
  double bnd = 2.5;
  double background = 0.1;
};

/// Mean over points of |dx| + |dy|.
double mean_l1(const Polyline& a, const Polyline& b);

/// lambda_cls * -p(gt class) + lambda_pts * mean L1(centerlines)
/// + lambda_bnd * mean L1 over both boundaries.
double match_cost(const LaneSegment& pred, std::span<const double> class_probs, const LaneSegment& gt,
                  const LossWeights& w);

struct LossBreakdown {
  double total = 0, cls = 0, pts = 0, bnd = 0;
};

struct LossResult {
  Tensor loss;  // scalar
  LossBreakdown breakdown;
  std::vector<MatchResult> matches;  // per layer
};

/// Geometry in `outputs` and `groundtruth` is metric; L1 terms are measured
/// after dividing by the extent lengths. Deep supervision: the result is the
/// mean of the per-layer losses.
LossResult total_loss(Tape& tape, const std::vector<LaneOutputs>& layer_outputs,
                      const std::vector<LaneSegment>& groundtruth, const BevExtent& extent,
                      const LossWeights& w);

}  // namespace lsn
