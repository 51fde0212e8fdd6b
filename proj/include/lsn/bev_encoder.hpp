#pragma once

// BEV encoder: a learned query grid refined by repeated
// [temporal self-attention -> spatial cross-attention -> feed-forward] layers.
//
// BEV embeddings are [rows * cols, D] with index = row * cols + col; column
// runs along ego x, row along ego y (see BevGridSpec).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lsn/attention.hpp"
#include "lsn/geometry.hpp"

namespace lsn {

struct EncoderConfig {
  std::size_t dim = 32;
  std::size_t heads = 4;
  std::size_t points = 4;
  std::size_t pillar_heights = 4;
  double pillar_z_min = -1.0;
  double pillar_z_max = 2.0;
  std::size_t ffn_dim = 64;
  std::size_t feature_channels = 64;  // backbone output channels
  std::size_t layers = 3;
  BevGridSpec grid;
};

std::vector<double> pillar_heights(std::size_t count, double z_min, double z_max);

/// Normalized (u, v) of every cell center.
Tensor grid_reference_points(const BevGridSpec& grid);

/// Previous-frame embeddings resampled at the current frame's cell centers:
/// cell c reads history at motion.apply_inverse(center(c)) bilinearly. The
/// result is a constant (history never carries gradient across frames).
Tensor warp_history(const Tensor& history, const BevGridSpec& grid, const EgoMotion& motion);

/// Which pillar points land inside which camera. Depends on geometry only.
struct HitTable {
  std::size_t cells = 0, views = 0, heights = 0;
  std::vector<std::uint8_t> hit;  // [cells][views][heights]
  std::vector<Scalar> uv;         // [cells][views][heights][2], normalized image coords
  std::vector<std::size_t> count; // hits per cell
  std::size_t total = 0;

  bool at(std::size_t cell, std::size_t view, std::size_t z) const {
    return hit[(cell * views + view) * heights + z] != 0;
  }
};

HitTable compute_hits(const BevGridSpec& grid, const std::vector<PinholeCamera>& cameras,
                      const std::vector<double>& heights);

/// Deformable attention of the BEV queries over [current, warped history];
/// returns bev + attention (residual included). Without history the current
/// grid stands in for both value maps.
class TemporalSelfAttention {
 public:
  TemporalSelfAttention() = default;
  TemporalSelfAttention(const EncoderConfig& cfg, ParameterStore& params, Rng& rng,
                        const std::string& name);
  Tensor forward(Tape& tape, const Tensor& bev, const std::optional<Tensor>& warped_history) const;

  DeformableAttention attn;

 private:
  BevGridSpec grid_;
  Tensor ref_;
};

/// Lifts each cell to a pillar of 3-D points, projects them into every view
/// and samples the hit views' features around the projections. The result is
/// averaged over hit (view, height) pairs and added to the input; cells
/// without hits come back unchanged.
class SpatialCrossAttention {
 public:
  SpatialCrossAttention() = default;
  SpatialCrossAttention(const EncoderConfig& cfg, ParameterStore& params, Rng& rng,
                        const std::string& name);
  Tensor forward(Tape& tape, const Tensor& bev, const std::vector<Tensor>& features,
                 const HitTable& hits) const;

  Linear offsets;      // D -> heads * Z * K * 2
  Linear attention;    // D -> heads * Z * K
  Linear value_proj;   // C_f -> D
  Linear output_proj;  // D -> D

 private:
  EncoderConfig cfg_;
};

struct EncoderCounts {
  std::size_t tsa = 0, sca = 0, ffn = 0;
};

class BevEncoder {
 public:
  BevEncoder() = default;
  BevEncoder(const EncoderConfig& cfg, ParameterStore& params, Rng& rng,
             const std::string& name = "encoder");

  /// features: one [C_f, H_f, W_f] map per camera. `history` is the previous
  /// frame's output (already detached) or nullopt at the start of a sequence.
  Tensor encode(Tape& tape, const std::vector<Tensor>& features,
                const std::vector<PinholeCamera>& cameras, const std::optional<Tensor>& history,
                const EgoMotion& motion) const;

  const EncoderConfig& config() const { return cfg_; }
  const EncoderCounts& counts() const { return counts_; }
  void reset_counts() const { counts_ = {}; }

 private:
  struct Layer {
    TemporalSelfAttention tsa;
    LayerNorm norm1;
    SpatialCrossAttention sca;
    LayerNorm norm2;
    FeedForward ffn;
    LayerNorm norm3;
  };

  EncoderConfig cfg_;
  Tensor queries_;
  std::vector<Layer> layers_;
  std::vector<double> heights_;
  mutable EncoderCounts counts_;
};

}  // namespace lsn
