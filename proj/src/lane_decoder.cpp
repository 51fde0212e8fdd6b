#include "lsn/lane_decoder.hpp"

#include <cmath>

#include "lsn/errors.hpp"

namespace lsn {

DecoderLayer::DecoderLayer(const DecoderConfig& cfg, ParameterStore& params, Rng& rng,
                           const std::string& name)
    : self_attn(cfg.dim, cfg.heads, params, rng, name + ".self_attn"),
      norm1(LayerNorm::make(params, name + ".norm1", cfg.dim)),
      cross_attn(DeformAttnConfig{cfg.dim, cfg.heads, 1, cfg.points}, params, rng, name + ".cross_attn"),
      norm2(LayerNorm::make(params, name + ".norm2", cfg.dim)),
      ffn(FeedForward::make(params, rng, name + ".ffn", cfg.dim, cfg.ffn_dim)),
      norm3(LayerNorm::make(params, name + ".norm3", cfg.dim)),
      refine(FeedForward::make(params, rng, name + ".refine", cfg.dim, cfg.dim, Linear::Init::kZero, 2)),
      grid_(cfg.grid) {}

LaneQuerySet DecoderLayer::forward(Tape& tape, const LaneQuerySet& q, const Tensor& bev,
                                   DecoderCounts* counts) const {
  Tensor x = norm1(tape, ops::add(tape, q.embeddings, self_attn.forward(tape, q.embeddings)));
  const Tensor ref = ops::sigmoid(tape, q.ref_logits);
  x = norm2(tape, ops::add(tape, x, cross_attn.forward(tape, x, ref, {bev}, {grid_.rows, grid_.cols})));
  x = norm3(tape, ops::add(tape, x, ffn(tape, x)));
  if (counts) {
    ++counts->self_attn;
    ++counts->cross_attn;
    ++counts->ffn;
  }
  return {x, ops::add(tape, q.ref_logits, refine(tape, x))};
}

LaneDecoder::LaneDecoder(const DecoderConfig& cfg, ParameterStore& params, Rng& rng,
                         const std::string& name)
    : cfg_(cfg) {
  if (cfg.layers == 0) throw ConfigError("decoder needs at least one layer");
  if (cfg.num_queries == 0) throw ConfigError("decoder needs at least one query");
  queries_ = params.add(name + ".queries", init::kaiming_normal(rng, {cfg.num_queries, cfg.dim}, cfg.dim));
  // Initial reference points spread uniformly over the map.
  std::vector<Scalar> logits(cfg.num_queries * 2);
  for (Scalar& v : logits) {
    const double u = rng.uniform(0.05, 0.95);
    v = static_cast<Scalar>(std::log(u / (1 - u)));
  }
  ref_logits_ = params.add(name + ".ref_logits", Tensor::from({cfg.num_queries, 2}, std::move(logits)));
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    layers_.emplace_back(cfg, params, rng, name + ".layer" + std::to_string(i));
  }
}

std::vector<LaneQuerySet> LaneDecoder::decode(Tape& tape, const LaneQuerySet& q0, const Tensor& bev) const {
  if (bev.ndim() != 2 || bev.dim(0) != cfg_.grid.cells() || bev.dim(1) != cfg_.dim) {
    throw DimensionError("decoder expects a BEV of [" + std::to_string(cfg_.grid.cells()) + "," +
                         std::to_string(cfg_.dim) + "], got " + shape_str(bev.shape()));
  }
  std::vector<LaneQuerySet> out;
  out.reserve(layers_.size());
  LaneQuerySet q = q0;
  for (const DecoderLayer& l : layers_) {
    q = l.forward(tape, q, bev, &counts_);
    out.push_back(q);
  }
  return out;
}

}  // namespace lsn
