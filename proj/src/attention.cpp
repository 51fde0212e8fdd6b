#include "lsn/attention.hpp"

#include <cmath>
#include <numbers>

#include "lsn/errors.hpp"

namespace lsn {

std::vector<std::size_t> column_block_index(std::size_t rows, std::size_t cols, std::size_t start,
                                            std::size_t width, bool transpose) {
  std::vector<std::size_t> idx(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const std::size_t dst = transpose ? c * rows + r : r * width + c;
      idx[dst] = r * cols + start + c;
    }
  }
  return idx;
}

DeformableAttention::DeformableAttention(const DeformAttnConfig& cfg, ParameterStore& params,
                                         Rng& rng, const std::string& name)
    : cfg_(cfg) {
  if (cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
    throw ConfigError(name + ": dim " + std::to_string(cfg.dim) + " is not divisible by " +
                      std::to_string(cfg.heads) + " heads");
  }
  if (cfg.levels == 0 || cfg.points == 0) throw ConfigError(name + ": needs levels and points");
  const std::size_t samples = cfg.heads * cfg.levels * cfg.points;
  offsets = Linear::make(params, rng, name + ".offsets", cfg.dim, samples * 2, Linear::Init::kZero);
  // Initial offsets fan out from the reference point: one direction per head,
  // growing by half a cell per point.
  auto ob = offsets.bias.mutable_data();
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(h) / static_cast<double>(cfg.heads);
    for (std::size_t l = 0; l < cfg.levels; ++l) {
      for (std::size_t k = 0; k < cfg.points; ++k) {
        const std::size_t s = (h * cfg.levels + l) * cfg.points + k;
        const double r = 0.5 * static_cast<double>(k + 1);
        ob[2 * s] = static_cast<Scalar>(r * std::cos(theta));
        ob[2 * s + 1] = static_cast<Scalar>(r * std::sin(theta));
      }
    }
  }
  attention = Linear::make(params, rng, name + ".attention", cfg.dim, samples, Linear::Init::kZero);
  value_proj = Linear::make(params, rng, name + ".value", cfg.dim, cfg.dim);
  output_proj = Linear::make(params, rng, name + ".output", cfg.dim, cfg.dim);
}

Tensor DeformableAttention::forward(Tape& tape, const Tensor& queries, const Tensor& ref,
                                    const std::vector<Tensor>& values, ops::LevelShape shape) const {
  const std::size_t n = queries.dim(0);
  const std::size_t lk = cfg_.levels * cfg_.points;
  const std::size_t samples = cfg_.heads * lk;
  if (ref.shape() != Shape{n, 2}) {
    throw DimensionError("deformable attention: ref " + shape_str(ref.shape()) + " for " +
                         std::to_string(n) + " queries");
  }
  if (values.size() != cfg_.levels) {
    throw DimensionError("deformable attention: " + std::to_string(values.size()) +
                         " value maps, configured for " + std::to_string(cfg_.levels));
  }

  // Offsets are in cells; divide by the map size to get normalized units.
  std::vector<Scalar> inv(n * samples * 2);
  for (std::size_t i = 0; i < inv.size(); i += 2) {
    inv[i] = Scalar(1) / static_cast<Scalar>(shape.width);
    inv[i + 1] = Scalar(1) / static_cast<Scalar>(shape.height);
  }
  const Tensor off = ops::mul(tape, offsets(tape, queries), Tensor::from({n, samples * 2}, std::move(inv)));
  std::vector<std::size_t> ref_idx(n * samples * 2);
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t s = 0; s < samples; ++s) {
      ref_idx[(q * samples + s) * 2] = q * 2;
      ref_idx[(q * samples + s) * 2 + 1] = q * 2 + 1;
    }
  }
  const Shape loc_shape{n, cfg_.heads, lk, 2};
  const Tensor loc = ops::add(tape, ops::reshape(tape, off, loc_shape),
                              ops::gather(tape, ref, std::move(ref_idx), loc_shape));
  const Tensor weights = ops::softmax(
      tape, ops::reshape(tape, attention(tape, queries), {n, cfg_.heads, lk}), -1);

  std::vector<Tensor> projected;
  projected.reserve(values.size());
  for (const Tensor& v : values) projected.push_back(value_proj(tape, v));
  const std::vector<ops::LevelShape> levels(cfg_.levels, shape);
  std::vector<std::size_t> level_of(lk);
  for (std::size_t s = 0; s < lk; ++s) level_of[s] = s / cfg_.points;
  const Tensor sampled = ops::deform_sample(tape, projected, levels, level_of, loc, weights);
  return output_proj(tape, sampled);
}

MultiHeadSelfAttention::MultiHeadSelfAttention(std::size_t dim, std::size_t heads,
                                               ParameterStore& params, Rng& rng,
                                               const std::string& name)
    : dim_(dim), heads_(heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError(name + ": dim " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  query = Linear::make(params, rng, name + ".query", dim, dim);
  key = Linear::make(params, rng, name + ".key", dim, dim);
  value = Linear::make(params, rng, name + ".value", dim, dim);
  output = Linear::make(params, rng, name + ".output", dim, dim);
}

Tensor MultiHeadSelfAttention::forward(Tape& tape, const Tensor& x) const {
  const std::size_t n = x.dim(0);
  if (x.dim(1) != dim_) {
    throw DimensionError("self-attention input " + shape_str(x.shape()) + ", dim " + std::to_string(dim_));
  }
  const std::size_t dh = dim_ / heads_;
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const Tensor q = ops::scale(tape, query(tape, x), scale);
  const Tensor k = key(tape, x);
  const Tensor v = value(tape, x);
  std::vector<Tensor> outs;
  outs.reserve(heads_);
  for (std::size_t h = 0; h < heads_; ++h) {
    const Tensor qh = ops::gather(tape, q, column_block_index(n, dim_, h * dh, dh, false), {n, dh});
    const Tensor kt = ops::gather(tape, k, column_block_index(n, dim_, h * dh, dh, true), {dh, n});
    const Tensor vh = ops::gather(tape, v, column_block_index(n, dim_, h * dh, dh, false), {n, dh});
    const Tensor attn = ops::softmax(tape, ops::matmul(tape, qh, kt), -1);
    outs.push_back(ops::matmul(tape, attn, vh));
  }
  return output(tape, ops::concat(tape, outs, 1));
}

}  // namespace lsn
