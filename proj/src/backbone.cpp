#include "lsn/backbone.hpp"

#include "lsn/dataset.hpp"
#include "lsn/errors.hpp"
#include "lsn/ops.hpp"

namespace lsn {
namespace {

std::size_t after_stem(const BackboneConfig& c, std::size_t n) {
  n = ops::conv_out_size(n, c.stem_kernel, 2, c.stem_kernel / 2);
  if (c.stem_maxpool) n = ops::conv_out_size(n, 3, 2, 1);
  return n;
}

std::size_t after_stages(std::size_t n) {
  for (int s = 1; s < 4; ++s) n = ops::conv_out_size(n, 3, 2, 1);
  return n;
}

// Walks the layer layout shared by the counter and the model builder.
template <typename Visit>
void walk_layers(const BackboneConfig& c, Visit&& visit) {
  std::size_t h = c.input_height, w = c.input_width;
  auto conv = [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                  std::size_t stride) {
    const std::size_t oh = ops::conv_out_size(h, k, stride, k / 2);
    const std::size_t ow = ops::conv_out_size(w, k, stride, k / 2);
    visit(name, cin, cout, k, stride, oh, ow);
    return std::pair{oh, ow};
  };
  std::tie(h, w) = conv("stem", c.input_channels, c.stem_channels, c.stem_kernel, 2);
  if (c.stem_maxpool) {
    h = ops::conv_out_size(h, 3, 2, 1);
    w = ops::conv_out_size(w, 3, 2, 1);
  }
  std::size_t cin = c.stem_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t width = c.stage_width(s), cout = c.stage_out_channels(s);
    for (std::size_t b = 0; b < c.stage_block_counts[s]; ++b) {
      const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
      const std::string p = "s" + std::to_string(s + 1) + ".b" + std::to_string(b + 1);
      const std::size_t ih = h, iw = w;
      if (c.block_kind == BlockKind::kBasic) {
        std::tie(h, w) = conv(p + ".conv1", cin, width, 3, stride);
        conv(p + ".conv2", width, cout, 3, 1);
      } else {
        conv(p + ".conv1", cin, width, 1, 1);
        std::tie(h, w) = conv(p + ".conv2", width, width, 3, stride);
        conv(p + ".conv3", width, cout, 1, 1);
      }
      if (stride != 1 || cin != cout) {
        const std::size_t save_h = h, save_w = w;
        h = ih;
        w = iw;
        conv(p + ".shortcut", cin, cout, 1, stride);
        h = save_h;
        w = save_w;
      }
      cin = cout;
    }
  }
}

}  // namespace

std::size_t BackboneConfig::output_height() const { return after_stages(after_stem(*this, input_height)); }
std::size_t BackboneConfig::output_width() const { return after_stages(after_stem(*this, input_width)); }

void BackboneConfig::validate() const {
  for (std::size_t v : stage_block_counts) {
    if (v == 0) throw ConfigError("backbone stage block counts must be positive");
  }
  for (std::size_t v : stage_channel_multipliers) {
    if (v == 0) throw ConfigError("backbone channel multipliers must be positive");
  }
  if (stem_channels == 0 || input_channels == 0) throw ConfigError("backbone channels must be positive");
  if (stem_kernel % 2 == 0) throw ConfigError("backbone stem kernel must be odd");
  const std::size_t s = output_stride();
  if (input_height % s != 0 || input_width % s != 0) {
    throw ConfigError("backbone output stride " + std::to_string(s) + " does not divide input " +
                      std::to_string(input_height) + "x" + std::to_string(input_width));
  }
}

const std::vector<std::string>& backbone_preset_names() {
  static const std::vector<std::string> names{"resnet18-shape", "resnet50-shape", "toy-basic",
                                              "toy-bottleneck"};
  return names;
}

BackboneConfig backbone_preset(const std::string& name, std::size_t channels, std::size_t height,
                               std::size_t width) {
  BackboneConfig c;
  if (name == "resnet18-shape" || name == "resnet50-shape") {
    c.stem_channels = 64;
    c.stage_channel_multipliers = {1, 2, 4, 8};
    c.stem_kernel = 7;
    c.stem_maxpool = true;
    c.classifier_outputs = 1000;
    c.input_channels = 3;
    c.input_height = 224;
    c.input_width = 224;
    if (name == "resnet18-shape") {
      c.block_kind = BlockKind::kBasic;
      c.stage_block_counts = {2, 2, 2, 2};
    } else {
      c.block_kind = BlockKind::kBottleneck;
      c.stage_block_counts = {3, 4, 6, 3};
    }
    return c;
  }
  c.input_channels = channels;
  c.input_height = height;
  c.input_width = width;
  c.stem_kernel = 3;
  c.stem_maxpool = false;
  c.stem_channels = 4;
  c.stage_channel_multipliers = {1, 2, 4, 8};
  // Scaled-down counterparts of the two ImageNet layouts: the bottleneck
  // variant is deeper and costs a bit over twice as much.
  if (name == "toy-basic") {
    c.block_kind = BlockKind::kBasic;
    c.stage_block_counts = {1, 1, 1, 1};
  } else if (name == "toy-bottleneck") {
    c.block_kind = BlockKind::kBottleneck;
    c.stage_block_counts = {1, 2, 2, 1};
  } else {
    std::string valid;
    for (const auto& n : backbone_preset_names()) valid += " " + n;
    throw ConfigError("unknown backbone preset '" + name + "'; valid:" + valid);
  }
  return c;
}

FlopsReport count_flops(const BackboneConfig& cfg) {
  FlopsReport r;
  walk_layers(cfg, [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                       std::size_t, std::size_t oh, std::size_t ow) {
    const std::uint64_t macs = static_cast<std::uint64_t>(cout) * cin * k * k * oh * ow;
    r.layers.push_back({name, {cout, oh, ow}, macs});
    r.macs += macs;
  });
  if (cfg.classifier_outputs > 0) {
    const std::uint64_t macs = static_cast<std::uint64_t>(cfg.output_channels()) * cfg.classifier_outputs;
    r.layers.push_back({"fc", {cfg.classifier_outputs}, macs});
    r.macs += macs;
  }
  return r;
}

Backbone::Conv Backbone::make_conv(ParameterStore& params, Rng& rng, const std::string& name,
                                   std::size_t cin, std::size_t cout, std::size_t k,
                                   std::size_t stride, bool zero_init) {
  Conv c;
  c.stride = stride;
  c.padding = k / 2;
  c.weight = params.add(name + ".w", zero_init ? init::constant({cout, cin, k, k}, 0)
                                               : init::kaiming_normal(rng, {cout, cin, k, k}, cin * k * k));
  c.bias = params.add(name + ".b", init::constant({cout}, 0));
  return c;
}

Backbone::Backbone(BackboneConfig cfg, ParameterStore& params, Rng& rng, const std::string& prefix)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  const bool bottleneck = cfg_.block_kind == BlockKind::kBottleneck;
  Block* current = nullptr;
  walk_layers(cfg_, [&](const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                        std::size_t stride, std::size_t, std::size_t) {
    const std::string full = prefix + "." + name;
    if (name == "stem") {
      stem_ = make_conv(params, rng, full, cin, cout, k, stride, false);
      return;
    }
    if (name.ends_with(".shortcut")) {
      current->projection = true;
      current->shortcut = make_conv(params, rng, full, cin, cout, k, stride, false);
      return;
    }
    if (name.ends_with(".conv1")) {
      blocks_.emplace_back();
      current = &blocks_.back();
    }
    // The last conv of every residual branch starts at zero so each block
    // begins as an identity map (or as its projection shortcut).
    const bool last = name.ends_with(bottleneck ? ".conv3" : ".conv2");
    current->convs.push_back(make_conv(params, rng, full, cin, cout, k, stride, last));
  });
}

Tensor Backbone::apply(Tape& tape, const Conv& c, const Tensor& x) const {
  return ops::conv2d(tape, x, c.weight, c.bias, c.stride, c.padding);
}

Tensor Backbone::forward(Tape& tape, const Tensor& image) const {
  const Shape want{cfg_.input_channels, cfg_.input_height, cfg_.input_width};
  if (image.shape() != want) {
    throw DimensionError("backbone input " + shape_str(image.shape()) + ", expected " + shape_str(want));
  }
  Tensor x = ops::relu(tape, apply(tape, stem_, image));
  if (cfg_.stem_maxpool) x = ops::max_pool2d(tape, x, 3, 2, 1);
  for (std::size_t i = 0; i < blocks_.size(); ++i) x = block_forward(tape, i, x);
  return x;
}

Tensor Backbone::block_forward(Tape& tape, std::size_t index, const Tensor& x) const {
  const Block& b = blocks_.at(index);
  Tensor y = x;
  for (std::size_t i = 0; i < b.convs.size(); ++i) {
    y = apply(tape, b.convs[i], y);
    if (i + 1 < b.convs.size()) y = ops::relu(tape, y);
  }
  const Tensor skip = b.projection ? apply(tape, b.shortcut, x) : x;
  return ops::relu(tape, ops::add(tape, y, skip));
}

std::vector<Tensor> Backbone::extract_features(Tape& tape, const std::vector<Tensor>& views) const {
  std::vector<Tensor> out;
  out.reserve(views.size());
  const Shape want{cfg_.input_channels, cfg_.input_height, cfg_.input_width};
  for (std::size_t v = 0; v < views.size(); ++v) {
    if (views[v].shape() != want) {
      throw DimensionError("view " + std::to_string(v) + " has shape " + shape_str(views[v].shape()) +
                           ", backbone expects " + shape_str(want));
    }
    out.push_back(forward(tape, views[v]));
  }
  return out;
}

std::vector<Tensor> Backbone::extract_features(Tape& tape, const MultiViewFrame& frame) const {
  std::vector<Tensor> views;
  views.reserve(frame.images.size());
  for (const Image& img : frame.images) views.push_back(img.to_tensor());
  return extract_features(tape, views);
}

}  // namespace lsn
