#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lsn/backbone.hpp"
#include "lsn/errors.hpp"
#include "lsn/ops.hpp"
#include "test_support.hpp"

using namespace lsn;
using lsn::testing::random_tensor;

TEST_CASE("ImageNet-shaped operation counts") {
  const FlopsReport r50 = count_flops(backbone_preset("resnet50-shape"));
  const FlopsReport r18 = count_flops(backbone_preset("resnet18-shape"));
  // Published figures count multiply-adds.
  CHECK(std::abs(static_cast<double>(r50.macs) / 3.8e9 - 1.0) <= 0.15);
  CHECK(std::abs(static_cast<double>(r18.macs) / 1.8e9 - 1.0) <= 0.15);
  const double ratio = static_cast<double>(r50.macs) / static_cast<double>(r18.macs);
  CHECK(ratio >= 1.9);
  CHECK(ratio <= 2.3);
  CHECK(r50.flops() == 2 * r50.macs);
  // 1 stem + 16 blocks x 3 convs + 4 projections + fc
  CHECK(r50.layers.size() == 1 + 48 + 4 + 1);
  CHECK(r18.layers.size() == 1 + 16 + 3 + 1);
  CHECK(r50.layers.back().output == Shape{1000});
}

TEST_CASE("single 1x1 convolution count") {
  Tape tape(false);
  Rng rng(1);
  ops::conv2d(tape, random_tensor(rng, {2, 4, 4}), random_tensor(rng, {3, 2, 1, 1}), Tensor{}, 1, 0);
  CHECK(tape.macs() == 96);
  CHECK(2 * tape.macs() == 192);
}

TEST_CASE("analytic count matches instrumented forward") {
  for (const char* name : {"toy-basic", "toy-bottleneck"}) {
    const BackboneConfig cfg = backbone_preset(name, 3, 64, 96);
    ParameterStore ps;
    Rng rng(2);
    Backbone bb(cfg, ps, rng);
    Tape tape(false);
    bb.forward(tape, random_tensor(rng, {3, 64, 96}, 0, 1, false));
    CHECK(tape.macs() == count_flops(cfg).macs);
  }
}

TEST_CASE("toy feature shapes") {
  for (const char* name : {"toy-basic", "toy-bottleneck"}) {
    const BackboneConfig cfg = backbone_preset(name, 3, 64, 96);
    CHECK(cfg.output_height() == 4);
    CHECK(cfg.output_width() == 6);
    CHECK(cfg.output_stride() == 16);
    ParameterStore ps;
    Rng rng(3);
    Backbone bb(cfg, ps, rng);
    std::vector<Tensor> views;
    for (int v = 0; v < 7; ++v) views.push_back(random_tensor(rng, {3, 64, 96}, 0, 1, false));
    Tape tape(false);
    const auto maps = bb.extract_features(tape, views);
    REQUIRE(maps.size() == 7);
    for (const Tensor& m : maps) CHECK(m.shape() == Shape{cfg.output_channels(), 4, 6});
  }
}

TEST_CASE("weight sharing, equivariance and zero input") {
  const BackboneConfig cfg = backbone_preset("toy-bottleneck", 1, 64, 96);
  ParameterStore ps;
  Rng rng(4);
  Backbone bb(cfg, ps, rng);
  std::vector<Tensor> views;
  for (int v = 0; v < 7; ++v) views.push_back(random_tensor(rng, {1, 64, 96}, 0, 1, false));
  views[3] = views[1];
  Tape tape(false);
  const auto maps = bb.extract_features(tape, views);
  CHECK(maps[1].values() == maps[3].values());

  const std::vector<std::size_t> perm{6, 0, 5, 1, 4, 2, 3};
  std::vector<Tensor> permuted;
  for (std::size_t i : perm) permuted.push_back(views[i]);
  const auto pmaps = bb.extract_features(tape, permuted);
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(pmaps[i].values() == maps[perm[i]].values());

  const auto again = bb.extract_features(tape, views);
  for (std::size_t i = 0; i < 7; ++i) CHECK(again[i].values() == maps[i].values());

  const Tensor zero = bb.forward(tape, Tensor::zeros({1, 64, 96}));
  for (Scalar v : zero.data()) CHECK(v == 0);
}

TEST_CASE("zero-initialized residual branch is the identity") {
  BackboneConfig cfg = backbone_preset("toy-basic", 1, 64, 96);
  cfg.stage_block_counts = {2, 1, 1, 1};
  ParameterStore ps;
  Rng rng(5);
  Backbone bb(cfg, ps, rng);
  // Block 1 (s1.b2) keeps the stem width at stride 1, so it has no projection.
  const Tensor x = random_tensor(rng, {cfg.stem_channels, 32, 48}, 0, 1, false);
  Tape tape(false);
  CHECK(bb.block_forward(tape, 1, x).values() == x.values());
}

TEST_CASE("shape errors") {
  const BackboneConfig cfg = backbone_preset("toy-basic", 1, 64, 96);
  ParameterStore ps;
  Rng rng(6);
  Backbone bb(cfg, ps, rng);
  std::vector<Tensor> views(7, Tensor::zeros({1, 64, 96}));
  views[4] = Tensor::zeros({1, 32, 96});
  Tape tape(false);
  try {
    bb.extract_features(tape, views);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("view 4") != std::string::npos);
  }
  CHECK_THROWS_AS(backbone_preset("toy-basic", 1, 60, 96).validate(), ConfigError);
  CHECK_THROWS_AS(backbone_preset("resnet101"), ConfigError);
}
