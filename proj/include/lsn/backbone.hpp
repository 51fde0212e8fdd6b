#pragma once

// Residual convolutional feature extractor applied to every camera view with
// shared weights, and an analytic operation counter for its configurations.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lsn/params.hpp"
#include "lsn/tensor.hpp"

namespace lsn {

struct MultiViewFrame;

enum class BlockKind { kBasic, kBottleneck };

struct BackboneConfig {
  BlockKind block_kind = BlockKind::kBasic;
  std::array<std::size_t, 4> stage_block_counts{1, 1, 1, 1};
  std::size_t stem_channels = 8;
  std::array<std::size_t, 4> stage_channel_multipliers{1, 2, 4, 8};
  std::size_t input_channels = 3, input_height = 64, input_width = 96;
  std::size_t stem_kernel = 3;
  // ImageNet-style stems add a 3x3/2 max pool after the stride-2 conv.
  bool stem_maxpool = false;
  // Classifier outputs counted by count_flops (0: no classifier). Never run.
  std::size_t classifier_outputs = 0;

  static constexpr std::size_t kBottleneckExpansion = 4;

  std::size_t stage_width(std::size_t stage) const {
    return stem_channels * stage_channel_multipliers[stage];
  }
  std::size_t stage_out_channels(std::size_t stage) const {
    return block_kind == BlockKind::kBottleneck ? stage_width(stage) * kBottleneckExpansion
                                                : stage_width(stage);
  }
  std::size_t output_channels() const { return stage_out_channels(3); }
  std::size_t output_stride() const { return stem_maxpool ? 32 : 16; }
  std::size_t output_height() const;
  std::size_t output_width() const;

  void validate() const;
};

/// Named presets: resnet18-shape and resnet50-shape (ImageNet layouts at
/// 3x224x224 with a 1000-way classifier), toy-basic and toy-bottleneck.
/// Toy presets take the input shape from the arguments.
BackboneConfig backbone_preset(const std::string& name, std::size_t channels = 3,
                               std::size_t height = 224, std::size_t width = 224);
const std::vector<std::string>& backbone_preset_names();

struct LayerCount {
  std::string name;
  Shape output;  // [C, H, W] for convs, [N] for the classifier
  std::uint64_t macs = 0;
};

struct FlopsReport {
  std::vector<LayerCount> layers;
  std::uint64_t macs = 0;
  // Two floating-point operations per multiply-accumulate.
  std::uint64_t flops() const { return 2 * macs; }
};

/// Conv and linear layers only; pooling, activations and additions are not
/// counted.
FlopsReport count_flops(const BackboneConfig& cfg);

class Backbone {
 public:
  Backbone(BackboneConfig cfg, ParameterStore& params, Rng& rng,
           const std::string& prefix = "backbone");

  const BackboneConfig& config() const { return cfg_; }

  /// One image [C, H, W] to its feature map.
  Tensor forward(Tape& tape, const Tensor& image) const;

  /// Feature maps for all views, in view order.
  std::vector<Tensor> extract_features(Tape& tape, const std::vector<Tensor>& views) const;
  std::vector<Tensor> extract_features(Tape& tape, const MultiViewFrame& frame) const;

  std::size_t num_blocks() const { return blocks_.size(); }
  // Residual block `i` alone, including its final activation.
  Tensor block_forward(Tape& tape, std::size_t i, const Tensor& x) const;

 private:
  struct Conv {
    Tensor weight, bias;
    std::size_t stride = 1, padding = 0;
  };
  struct Block {
    std::vector<Conv> convs;  // 2 (basic) or 3 (bottleneck)
    bool projection = false;
    Conv shortcut;
  };

  Conv make_conv(ParameterStore& params, Rng& rng, const std::string& name, std::size_t cin,
                 std::size_t cout, std::size_t k, std::size_t stride, bool zero_init);
  Tensor apply(Tape& tape, const Conv& c, const Tensor& x) const;

  BackboneConfig cfg_;
  Conv stem_;
  std::vector<Block> blocks_;
};

}  // namespace lsn
