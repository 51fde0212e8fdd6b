#pragma once

// The full network: shared backbone over the camera views, BEV encoder with
// temporal history, lane decoder and prediction head.

#include <optional>
#include <vector>

#include "lsn/backbone.hpp"
#include "lsn/bev_encoder.hpp"
#include "lsn/config.hpp"
#include "lsn/dataset.hpp"
#include "lsn/heads_loss.hpp"
#include "lsn/lane_decoder.hpp"

namespace lsn {

struct FrameOutput {
  Tensor bev;                        // [cells, D]
  std::vector<LaneOutputs> layers;   // one per decoder layer
};

class LaneSegModel {
 public:
  /// Parameters are initialized from Rng(cfg.seed) in a fixed order.
  explicit LaneSegModel(const ExperimentConfig& cfg);

  LaneSegModel(const LaneSegModel&) = delete;
  LaneSegModel& operator=(const LaneSegModel&) = delete;

  FrameOutput forward_frame(Tape& tape, const MultiViewFrame& frame, const std::optional<Tensor>& history,
                            const EgoMotion& motion) const;

  /// Runs every frame of the scene in order, threading the history BEV, and
  /// returns the final-layer predictions per frame.
  std::vector<std::vector<LaneSegment>> predict_scene(const Scene& scene) const;

  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const ExperimentConfig& config() const { return cfg_; }
  const Backbone& backbone() const { return *backbone_; }
  const BevEncoder& encoder() const { return encoder_; }
  const LaneDecoder& decoder() const { return decoder_; }
  const PredictionHead& head() const { return head_; }
  LossWeights loss_weights() const;

 private:
  ExperimentConfig cfg_;
  ParameterStore params_;
  std::optional<Backbone> backbone_;
  BevEncoder encoder_;
  LaneDecoder decoder_;
  PredictionHead head_;
};

EncoderConfig encoder_config(const ExperimentConfig& cfg);
DecoderConfig decoder_config(const ExperimentConfig& cfg);
HeadConfig head_config(const ExperimentConfig& cfg);
BackboneConfig backbone_config(const ExperimentConfig& cfg);

/// Ego motion from frame t-1 to frame t of a scene (identity for t = 0).
EgoMotion frame_motion(const Scene& scene, std::size_t t);

}  // namespace lsn
