#include "lsn/model.hpp"

#include "lsn/errors.hpp"

namespace lsn {

BackboneConfig backbone_config(const ExperimentConfig& cfg) {
  return backbone_preset(cfg.backbone, cfg.image_channels, cfg.image_height, cfg.image_width);
}

EncoderConfig encoder_config(const ExperimentConfig& cfg) {
  EncoderConfig e;
  e.dim = cfg.embed_dim;
  e.heads = cfg.encoder_heads;
  e.points = cfg.sample_points;
  e.pillar_heights = cfg.pillar_heights;
  e.pillar_z_min = cfg.pillar_z_min;
  e.pillar_z_max = cfg.pillar_z_max;
  e.ffn_dim = cfg.ffn_dim;
  e.feature_channels = backbone_config(cfg).output_channels();
  e.layers = cfg.encoder_layers;
  e.grid = cfg.grid();
  return e;
}

DecoderConfig decoder_config(const ExperimentConfig& cfg) {
  DecoderConfig d;
  d.dim = cfg.embed_dim;
  d.heads = cfg.decoder_heads;
  d.points = cfg.sample_points;
  d.ffn_dim = cfg.ffn_dim;
  d.num_queries = cfg.num_queries;
  d.layers = cfg.decoder_layers;
  d.grid = cfg.grid();
  return d;
}

HeadConfig head_config(const ExperimentConfig& cfg) {
  HeadConfig h;
  h.dim = cfg.embed_dim;
  h.points_per_lane = cfg.points_per_lane;
  h.extent = cfg.extent;
  return h;
}

LaneSegModel::LaneSegModel(const ExperimentConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(cfg_.seed);
  backbone_.emplace(backbone_config(cfg_), params_, rng);
  encoder_ = BevEncoder(encoder_config(cfg_), params_, rng);
  decoder_ = LaneDecoder(decoder_config(cfg_), params_, rng);
  head_ = PredictionHead(head_config(cfg_), params_, rng);
}

LossWeights LaneSegModel::loss_weights() const {
  return {cfg_.lambda_cls, cfg_.lambda_pts, cfg_.lambda_bnd, cfg_.background_weight};
}

FrameOutput LaneSegModel::forward_frame(Tape& tape, const MultiViewFrame& frame,
                                        const std::optional<Tensor>& history, const EgoMotion& motion) const {
  FrameOutput out;
  const auto features = backbone_->extract_features(tape, frame);
  out.bev = encoder_.encode(tape, features, frame.cameras, history, motion);
  for (const LaneQuerySet& q : decoder_.decode(tape, decoder_.initial(), out.bev)) {
    out.layers.push_back(head_.forward(tape, q));
  }
  return out;
}

std::vector<std::vector<LaneSegment>> LaneSegModel::predict_scene(const Scene& scene) const {
  std::vector<std::vector<LaneSegment>> result;
  std::optional<Tensor> history;
  for (std::size_t t = 0; t < scene.frames.size(); ++t) {
    Tape tape(false);
    const FrameOutput out = forward_frame(tape, scene.frames[t], history, frame_motion(scene, t));
    result.push_back(predict(out.layers.back()));
    history = out.bev.detach();
  }
  return result;
}

EgoMotion frame_motion(const Scene& scene, std::size_t t) {
  if (t >= scene.frames.size()) throw DimensionError("frame index out of range");
  if (t == 0) return {};
  return EgoMotion::between(scene.frames[t - 1].ego_pose, scene.frames[t].ego_pose);
}

}  // namespace lsn
