#pragma once

// Experiment configuration: a flat set of named keys, read from
// `key = value` files with `#` comments and overridable one key at a time.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lsn/geometry.hpp"

namespace lsn {

struct ExperimentConfig {
  // model
  std::string backbone = "toy-bottleneck";
  std::size_t image_channels = 1;
  std::size_t image_height = 64;
  std::size_t image_width = 96;
  std::size_t embed_dim = 32;
  std::size_t encoder_heads = 4;
  std::size_t decoder_heads = 8;
  std::size_t sample_points = 4;
  std::size_t pillar_heights = 4;
  double pillar_z_min = -1.0;
  double pillar_z_max = 2.0;
  std::size_t encoder_layers = 3;
  std::size_t decoder_layers = 6;
  std::size_t num_queries = 20;
  std::size_t points_per_lane = 10;
  std::size_t ffn_dim = 64;
  std::size_t bev_rows = 13;
  std::size_t bev_cols = 25;
  BevExtent extent;

  // loss
  double lambda_cls = 2.0;
  double lambda_pts = 5.0;
  double lambda_bnd = 2.5;
  double background_weight = 0.1;

  // optimizer
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 35.0;
  std::size_t warmup_steps = 0;

  // schedule and bookkeeping
  std::size_t epochs = 1;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  std::string dataset_dir = "data/train";
  std::string checkpoint_dir = "runs/default";
  std::size_t checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint

  BevGridSpec grid() const { return BevGridSpec{extent, bev_rows, bev_cols}; }

  /// Sets one key from its textual value. Unknown keys and malformed values
  /// raise ConfigError.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  /// Throws ConfigError when the combination of values is unusable.
  void validate() const;

  /// Every key with its value, one `key = value` line each, in fixed order.
  std::string to_text() const;

  /// FNV-1a over every key that affects the trained parameters. Run length
  /// (epochs) and directories are excluded so training can be extended.
  std::uint64_t hash() const;
  std::string hash_hex() const;

  static const std::vector<std::string>& keys();
};

/// Applies `key = value` lines to `cfg`. `origin` names the source in errors.
void apply_config_text(ExperimentConfig& cfg, const std::string& text,
                       const std::string& origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies a single `key=value` override.
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

/// The four experiment presets, in table order.
const std::vector<std::string>& experiment_preset_names();
ExperimentConfig experiment_preset(const std::string& name, const ExperimentConfig& base = {});

}  // namespace lsn
