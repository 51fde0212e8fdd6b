#include "lsn/bev_encoder.hpp"

#include <cmath>
#include <numbers>

#include "lsn/errors.hpp"

namespace lsn {

std::vector<double> pillar_heights(std::size_t count, double z_min, double z_max) {
  std::vector<double> z(count);
  for (std::size_t i = 0; i < count; ++i) {
    z[i] = count == 1 ? 0.5 * (z_min + z_max)
                      : z_min + (z_max - z_min) * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  return z;
}

Tensor grid_reference_points(const BevGridSpec& grid) {
  std::vector<Scalar> v(grid.cells() * 2);
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    const Vec2 uv = grid.cell_center_normalized(c);
    v[2 * c] = static_cast<Scalar>(uv.x);
    v[2 * c + 1] = static_cast<Scalar>(uv.y);
  }
  return Tensor::from({grid.cells(), 2}, std::move(v));
}

Tensor warp_history(const Tensor& history, const BevGridSpec& grid, const EgoMotion& motion) {
  const std::size_t cells = grid.cells();
  if (history.ndim() != 2 || history.dim(0) != cells) {
    throw DimensionError("history grid " + shape_str(history.shape()) + " does not match " +
                         std::to_string(grid.rows) + "x" + std::to_string(grid.cols) + " cells");
  }
  if (motion.is_identity()) return history.detach();
  const std::size_t d = history.dim(1);
  const auto H = history.data();
  std::vector<Scalar> out(cells * d, Scalar(0));
  for (std::size_t c = 0; c < cells; ++c) {
    const Vec2 prev = motion.apply_inverse(grid.cell_center(c));
    const Vec2 uv = grid.extent.normalize(prev);
    if (!(uv.x >= 0 && uv.x <= 1 && uv.y >= 0 && uv.y <= 1)) continue;
    const double x = uv.x * static_cast<double>(grid.cols) - 0.5;
    const double y = uv.y * static_cast<double>(grid.rows) - 0.5;
    const double x0 = std::floor(x), y0 = std::floor(y);
    const double fx = x - x0, fy = y - y0;
    Scalar* dst = out.data() + c * d;
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx) {
        const long cx = static_cast<long>(x0) + dx, cy = static_cast<long>(y0) + dy;
        if (cx < 0 || cy < 0 || cx >= static_cast<long>(grid.cols) || cy >= static_cast<long>(grid.rows)) {
          continue;
        }
        const auto w = static_cast<Scalar>((dx ? fx : 1 - fx) * (dy ? fy : 1 - fy));
        const Scalar* src = H.data() + (static_cast<std::size_t>(cy) * grid.cols + static_cast<std::size_t>(cx)) * d;
        for (std::size_t k = 0; k < d; ++k) dst[k] += w * src[k];
      }
    }
  }
  return Tensor::from({cells, d}, std::move(out));
}

HitTable compute_hits(const BevGridSpec& grid, const std::vector<PinholeCamera>& cameras,
                      const std::vector<double>& heights) {
  HitTable t;
  t.cells = grid.cells();
  t.views = cameras.size();
  t.heights = heights.size();
  t.hit.assign(t.cells * t.views * t.heights, 0);
  t.uv.assign(t.hit.size() * 2, Scalar(0));
  t.count.assign(t.cells, 0);
  for (std::size_t c = 0; c < t.cells; ++c) {
    const Vec2 xy = grid.cell_center(c);
    for (std::size_t v = 0; v < t.views; ++v) {
      const Intrinsics& k = cameras[v].intrinsics;
      for (std::size_t z = 0; z < t.heights; ++z) {
        const auto px = project(Vec3{xy.x, xy.y, heights[z]}, cameras[v]);
        if (!px) continue;
        const std::size_t i = (c * t.views + v) * t.heights + z;
        t.hit[i] = 1;
        t.uv[2 * i] = static_cast<Scalar>(px->x / static_cast<double>(k.width));
        t.uv[2 * i + 1] = static_cast<Scalar>(px->y / static_cast<double>(k.height));
        ++t.count[c];
        ++t.total;
      }
    }
  }
  return t;
}

TemporalSelfAttention::TemporalSelfAttention(const EncoderConfig& cfg, ParameterStore& params,
                                             Rng& rng, const std::string& name)
    : attn(DeformAttnConfig{cfg.dim, cfg.heads, 2, cfg.points}, params, rng, name),
      grid_(cfg.grid),
      ref_(grid_reference_points(cfg.grid)) {}

Tensor TemporalSelfAttention::forward(Tape& tape, const Tensor& bev,
                                      const std::optional<Tensor>& warped_history) const {
  if (warped_history && warped_history->shape() != bev.shape()) {
    throw DimensionError("history " + shape_str(warped_history->shape()) + " vs BEV " +
                         shape_str(bev.shape()));
  }
  const std::vector<Tensor> values{bev, warped_history ? *warped_history : bev};
  const Tensor out = attn.forward(tape, bev, ref_, values, ops::LevelShape{grid_.rows, grid_.cols});
  return ops::add(tape, bev, out);
}

SpatialCrossAttention::SpatialCrossAttention(const EncoderConfig& cfg, ParameterStore& params,
                                             Rng& rng, const std::string& name)
    : cfg_(cfg) {
  if (cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
    throw ConfigError(name + ": dim " + std::to_string(cfg.dim) + " is not divisible by " +
                      std::to_string(cfg.heads) + " heads");
  }
  const std::size_t zk = cfg.pillar_heights * cfg.points;
  offsets = Linear::make(params, rng, name + ".offsets", cfg.dim, cfg.heads * zk * 2, Linear::Init::kZero);
  auto ob = offsets.bias.mutable_data();
  for (std::size_t h = 0; h < cfg.heads; ++h) {
    const double theta = 2.0 * std::numbers::pi * static_cast<double>(h) / static_cast<double>(cfg.heads);
    for (std::size_t i = 0; i < zk; ++i) {
      const double r = 0.5 * static_cast<double>(i % cfg.points + 1);
      ob[2 * (h * zk + i)] = static_cast<Scalar>(r * std::cos(theta));
      ob[2 * (h * zk + i) + 1] = static_cast<Scalar>(r * std::sin(theta));
    }
  }
  attention = Linear::make(params, rng, name + ".attention", cfg.dim, cfg.heads * zk, Linear::Init::kZero);
  value_proj = Linear::make(params, rng, name + ".value", cfg.feature_channels, cfg.dim);
  output_proj = Linear::make(params, rng, name + ".output", cfg.dim, cfg.dim);
}

Tensor SpatialCrossAttention::forward(Tape& tape, const Tensor& bev, const std::vector<Tensor>& features,
                                      const HitTable& hits) const {
  const std::size_t cells = bev.dim(0), d = cfg_.dim;
  const std::size_t heads = cfg_.heads, zs = cfg_.pillar_heights, ks = cfg_.points;
  if (hits.cells != cells || hits.heights != zs || hits.views != features.size()) {
    throw DimensionError("hit table does not match the BEV grid and camera list");
  }
  if (features.empty()) throw DimensionError("spatial cross-attention needs camera features");
  const std::size_t views = features.size();
  const std::size_t fh = features[0].dim(1), fw = features[0].dim(2), fc = features[0].dim(0);
  for (std::size_t v = 0; v < views; ++v) {
    if (features[v].shape() != features[0].shape()) {
      throw DimensionError("view " + std::to_string(v) + " features " + shape_str(features[v].shape()) +
                           " differ from view 0 " + shape_str(features[0].shape()));
    }
  }

  std::vector<std::size_t> active;
  for (std::size_t c = 0; c < cells; ++c) {
    if (hits.count[c] > 0) active.push_back(c);
  }
  if (active.empty()) return bev;
  const std::size_t na = active.size();
  const std::size_t zk = zs * ks;
  const std::size_t samples = views * zk;  // ordered (view, height, point)

  std::vector<Tensor> values;
  values.reserve(views);
  for (const Tensor& f : features) {
    const Tensor flat = ops::transpose2d(tape, ops::reshape(tape, f, {fc, fh * fw}));
    values.push_back(value_proj(tape, flat));
  }

  const Tensor q = ops::take_rows(tape, bev, active);
  std::vector<Scalar> inv(na * heads * zk * 2);
  for (std::size_t i = 0; i < inv.size(); i += 2) {
    inv[i] = Scalar(1) / static_cast<Scalar>(fw);
    inv[i + 1] = Scalar(1) / static_cast<Scalar>(fh);
  }
  const Tensor off = ops::mul(tape, offsets(tape, q), Tensor::from({na, heads * zk * 2}, std::move(inv)));

  // Broadcast the per-(head, height, point) offsets over views and add the
  // projected pillar points.
  const std::size_t loc_n = na * heads * samples * 2;
  std::vector<std::size_t> off_idx(loc_n);
  std::vector<Scalar> base(loc_n, Scalar(0));
  std::vector<std::size_t> w_idx(na * heads * samples);
  std::vector<Scalar> scale(na * samples, Scalar(0));
  for (std::size_t a = 0; a < na; ++a) {
    const std::size_t cell = active[a];
    const Scalar inv_count = Scalar(1) / static_cast<Scalar>(hits.count[cell]);
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t v = 0; v < views; ++v) {
        for (std::size_t z = 0; z < zs; ++z) {
          const std::size_t hi = (cell * views + v) * zs + z;
          for (std::size_t k = 0; k < ks; ++k) {
            const std::size_t s = (v * zs + z) * ks + k;
            const std::size_t dst = (a * heads + h) * samples + s;
            const std::size_t src = (a * heads + h) * zk + z * ks + k;
            off_idx[2 * dst] = 2 * src;
            off_idx[2 * dst + 1] = 2 * src + 1;
            base[2 * dst] = hits.uv[2 * hi];
            base[2 * dst + 1] = hits.uv[2 * hi + 1];
            w_idx[dst] = src;
            if (h == 0 && hits.hit[hi]) scale[a * samples + s] = inv_count;
          }
        }
      }
    }
  }
  const Shape loc_shape{na, heads, samples, 2};
  const Tensor loc = ops::add(tape, ops::gather(tape, off, std::move(off_idx), loc_shape),
                              Tensor::from(loc_shape, std::move(base)));
  const Tensor w = ops::softmax(tape, ops::reshape(tape, attention(tape, q), {na * heads * zs, ks}), -1);
  const Tensor weights = ops::gather(tape, w, std::move(w_idx), {na, heads, samples});

  const std::vector<ops::LevelShape> levels(views, ops::LevelShape{fh, fw});
  std::vector<std::size_t> level_of(samples);
  for (std::size_t s = 0; s < samples; ++s) level_of[s] = s / zk;
  const Tensor sampled = ops::deform_sample(tape, values, levels, level_of, loc, weights, scale);
  const Tensor out = output_proj(tape, sampled);

  if (na == cells) return ops::add(tape, bev, out);
  // Scatter back; cells without hits read the appended zero row.
  const Tensor padded = ops::concat(tape, {out, Tensor::zeros({1, d})}, 0);
  std::vector<std::size_t> row_of(cells, na);
  for (std::size_t a = 0; a < na; ++a) row_of[active[a]] = a;
  std::vector<std::size_t> idx(cells * d);
  for (std::size_t c = 0; c < cells; ++c) {
    for (std::size_t j = 0; j < d; ++j) idx[c * d + j] = row_of[c] * d + j;
  }
  return ops::add(tape, bev, ops::gather(tape, padded, std::move(idx), {cells, d}));
}

BevEncoder::BevEncoder(const EncoderConfig& cfg, ParameterStore& params, Rng& rng,
                       const std::string& name)
    : cfg_(cfg), heights_(pillar_heights(cfg.pillar_heights, cfg.pillar_z_min, cfg.pillar_z_max)) {
  if (cfg.layers == 0) throw ConfigError("encoder needs at least one layer");
  queries_ = params.add(name + ".queries", init::kaiming_normal(rng, {cfg.grid.cells(), cfg.dim}, cfg.dim));
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    const std::string p = name + ".layer" + std::to_string(i);
    Layer l;
    l.tsa = TemporalSelfAttention(cfg, params, rng, p + ".tsa");
    l.norm1 = LayerNorm::make(params, p + ".norm1", cfg.dim);
    l.sca = SpatialCrossAttention(cfg, params, rng, p + ".sca");
    l.norm2 = LayerNorm::make(params, p + ".norm2", cfg.dim);
    l.ffn = FeedForward::make(params, rng, p + ".ffn", cfg.dim, cfg.ffn_dim);
    l.norm3 = LayerNorm::make(params, p + ".norm3", cfg.dim);
    layers_.push_back(std::move(l));
  }
}

Tensor BevEncoder::encode(Tape& tape, const std::vector<Tensor>& features,
                          const std::vector<PinholeCamera>& cameras,
                          const std::optional<Tensor>& history, const EgoMotion& motion) const {
  if (cameras.size() != features.size()) {
    throw DimensionError(std::to_string(features.size()) + " feature maps for " +
                         std::to_string(cameras.size()) + " cameras");
  }
  const HitTable hits = compute_hits(cfg_.grid, cameras, heights_);
  if (hits.total == 0) throw ConfigError("degenerate camera rig: no BEV cell is visible to any camera");
  std::optional<Tensor> warped;
  if (history) warped = warp_history(*history, cfg_.grid, motion);

  Tensor bev = queries_;
  for (const Layer& l : layers_) {
    bev = l.norm1(tape, l.tsa.forward(tape, bev, warped));
    ++counts_.tsa;
    bev = l.norm2(tape, l.sca.forward(tape, bev, features, hits));
    ++counts_.sca;
    bev = l.norm3(tape, ops::add(tape, bev, l.ffn(tape, bev)));
    ++counts_.ffn;
  }
  return bev;
}

}  // namespace lsn
