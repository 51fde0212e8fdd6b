#pragma once

// Lane decoder: learned lane queries refined by repeated
// [self-attention -> deformable cross-attention into the BEV -> feed-forward]
// layers. Each layer also nudges the queries' reference points.

#include <string>
#include <vector>

#include "lsn/attention.hpp"
#include "lsn/geometry.hpp"

namespace lsn {

struct DecoderConfig {
  std::size_t dim = 32;
  std::size_t heads = 8;
  std::size_t points = 4;
  std::size_t ffn_dim = 64;
  std::size_t num_queries = 20;
  std::size_t layers = 6;
  BevGridSpec grid;
};

/// Query embeddings [N_q, D] with reference points [N_q, 2] kept as logits;
/// sigmoid(ref_logits) is the normalized BEV position.
struct LaneQuerySet {
  Tensor embeddings;
  Tensor ref_logits;
};

struct DecoderCounts {
  std::size_t self_attn = 0, cross_attn = 0, ffn = 0;
};

class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(const DecoderConfig& cfg, ParameterStore& params, Rng& rng, const std::string& name);

  LaneQuerySet forward(Tape& tape, const LaneQuerySet& q, const Tensor& bev,
                       DecoderCounts* counts = nullptr) const;

  MultiHeadSelfAttention self_attn;
  LayerNorm norm1;
  DeformableAttention cross_attn;
  LayerNorm norm2;
  FeedForward ffn;
  LayerNorm norm3;
  FeedForward refine;  // D -> D -> 2, output layer starts at zero

 private:
  BevGridSpec grid_;
};

class LaneDecoder {
 public:
  LaneDecoder() = default;
  LaneDecoder(const DecoderConfig& cfg, ParameterStore& params, Rng& rng,
              const std::string& name = "decoder");

  /// The learned initial query set.
  LaneQuerySet initial() const { return {queries_, ref_logits_}; }

  /// One query set per layer, in order; the last feeds the final prediction.
  std::vector<LaneQuerySet> decode(Tape& tape, const LaneQuerySet& q0, const Tensor& bev) const;

  const DecoderConfig& config() const { return cfg_; }
  const std::vector<DecoderLayer>& layers() const { return layers_; }
  const DecoderCounts& counts() const { return counts_; }
  void reset_counts() const { counts_ = {}; }

 private:
  DecoderConfig cfg_;
  Tensor queries_, ref_logits_;
  std::vector<DecoderLayer> layers_;
  mutable DecoderCounts counts_;
};

}  // namespace lsn
