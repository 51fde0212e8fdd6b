#pragma once

// Attention blocks: multi-scale deformable attention over one or more value
// maps of equal size, and dense multi-head self-attention.

#include <string>
#include <vector>

#include "lsn/layers.hpp"
#include "lsn/ops.hpp"

namespace lsn {

struct DeformAttnConfig {
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t levels = 1;  // value maps attended jointly; softmax spans levels x points
  std::size_t points = 4;
};

/// For each query and head: predicts `levels * points` sampling offsets
/// (in cells of the value map) around the query's reference point plus one
/// attention logit per offset, samples the projected value maps bilinearly
/// and returns the weighted sum through an output projection.
class DeformableAttention {
 public:
  DeformableAttention() = default;
  DeformableAttention(const DeformAttnConfig& cfg, ParameterStore& params, Rng& rng,
                      const std::string& name);

  /// queries [N, D]; ref [N, 2] normalized (u, v); values: `levels` tensors
  /// [H*W, D] (position-major) that all share `shape`.
  Tensor forward(Tape& tape, const Tensor& queries, const Tensor& ref,
                 const std::vector<Tensor>& values, ops::LevelShape shape) const;

  const DeformAttnConfig& config() const { return cfg_; }

  Linear offsets;      // D -> heads * levels * points * 2
  Linear attention;    // D -> heads * levels * points
  Linear value_proj;   // D -> D
  Linear output_proj;  // D -> D

 private:
  DeformAttnConfig cfg_;
};

/// Scaled dot-product attention with `heads` parallel heads; no residual.
class MultiHeadSelfAttention {
 public:
  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(std::size_t dim, std::size_t heads, ParameterStore& params, Rng& rng,
                         const std::string& name);

  Tensor forward(Tape& tape, const Tensor& x) const;
  std::size_t heads() const { return heads_; }

  Linear query, key, value, output;

 private:
  std::size_t dim_ = 0, heads_ = 1;
};

// Indices of column block [start, start + width) of a row-major [rows, cols]
// matrix, optionally transposed.
std::vector<std::size_t> column_block_index(std::size_t rows, std::size_t cols, std::size_t start,
                                            std::size_t width, bool transpose);

}  // namespace lsn
