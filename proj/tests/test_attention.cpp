#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lsn/attention.hpp"
#include "lsn/errors.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace lsn;
using lsn::testing::random_tensor;

TEST_CASE("deformable attention matches the dense sampling formula") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    ParameterStore ps;
    DeformableAttention da(DeformAttnConfig{4, 1, 1, 3}, ps, rng, "da");
    lsn::testing::randomize(ps, rng, 0.5);
    const Tensor q = random_tensor(rng, {2, 4}, -1, 1, false);
    const Tensor ref = random_tensor(rng, {2, 2}, 0.1, 0.9, false);
    const Tensor values = random_tensor(rng, {16, 4}, -1, 1, false);
    Tape tape(false);
    const Tensor got = da.forward(tape, q, ref, {values}, {4, 4});
    const auto want = lsn::testing::dense_deformable_attention(da, q, ref, values, 4, 4);
    REQUIRE(want.size() == got.numel());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(std::abs(got.at(i) - want[i]) <= 1e-10 * std::max(1.0, std::abs(want[i])));
    }
  }
}

TEST_CASE("deformable attention collapse and border cases") {
  Rng rng(1);
  ParameterStore ps;
  DeformableAttention da(DeformAttnConfig{4, 1, 1, 3}, ps, rng, "da");
  lsn::testing::randomize(ps, rng, 0.5);
  for (Scalar& v : da.offsets.weight.mutable_data()) v = 0;
  for (Scalar& v : da.offsets.bias.mutable_data()) v = 0;
  const Tensor values = random_tensor(rng, {16, 4}, -1, 1, false);
  const Tensor q = random_tensor(rng, {2, 4}, -1, 1, false);
  Tape tape(false);

  SUBCASE("all weight on point 0 at a cell center") {
    for (Scalar& v : da.attention.weight.mutable_data()) v = 0;
    auto b = da.attention.bias.mutable_data();
    b[0] = 1000;
    b[1] = -1000;
    b[2] = -1000;
    // cells (1, 2) and (3, 0): u = (col + 0.5) / 4, v = (row + 0.5) / 4
    const Tensor ref = Tensor::from({2, 2}, {1.5 / 4, 2.5 / 4, 3.5 / 4, 0.5 / 4});
    const Tensor got = da.forward(tape, q, ref, {values}, {4, 4});
    const Tensor cells = ops::take_rows(tape, values, std::vector<std::size_t>{2 * 4 + 1, 0 * 4 + 3});
    const Tensor want = da.output_proj(tape, da.value_proj(tape, cells));
    for (std::size_t i = 0; i < want.numel(); ++i) CHECK(got.at(i) == doctest::Approx(want.at(i)).epsilon(1e-12));
  }
  SUBCASE("reference points outside the map") {
    for (Scalar& v : da.output_proj.bias.mutable_data()) v = 0;
    const Tensor ref = Tensor::from({2, 2}, {-0.5, 0.5, 0.3, 1.7});
    const Tensor got = da.forward(tape, q, ref, {values}, {4, 4});
    for (Scalar v : got.data()) CHECK(v == 0);
  }
}

TEST_CASE("deformable attention is invariant to permuting sample points") {
  Rng rng(2);
  ParameterStore ps;
  const DeformAttnConfig cfg{8, 2, 2, 3};
  DeformableAttention da(cfg, ps, rng, "da");
  lsn::testing::randomize(ps, rng, 0.5);
  const Tensor q = random_tensor(rng, {5, 8}, -1, 1, false);
  const Tensor ref = random_tensor(rng, {5, 2}, 0.1, 0.9, false);
  const std::vector<Tensor> values{random_tensor(rng, {20, 8}, -1, 1, false), random_tensor(rng, {20, 8}, -1, 1, false)};
  Tape tape(false);
  const Tensor before = da.forward(tape, q, ref, values, {4, 5});
  // Permute the points of every (head, level) group in the offset and logit
  // projections together.
  const std::vector<std::size_t> perm{2, 0, 1};
  auto permute = [&](Linear& lin, std::size_t width) {
    const std::size_t out = lin.out();
    auto w = lin.weight.mutable_data();
    auto b = lin.bias.mutable_data();
    const std::vector<Scalar> w0(w.begin(), w.end()), b0(b.begin(), b.end());
    for (std::size_t g = 0; g < cfg.heads * cfg.levels; ++g) {
      for (std::size_t k = 0; k < cfg.points; ++k) {
        for (std::size_t c = 0; c < width; ++c) {
          const std::size_t dst = (g * cfg.points + k) * width + c;
          const std::size_t src = (g * cfg.points + perm[k]) * width + c;
          b[dst] = b0[src];
          for (std::size_t r = 0; r < lin.in(); ++r) w[r * out + dst] = w0[r * out + src];
        }
      }
    }
  };
  permute(da.offsets, 2);
  permute(da.attention, 1);
  const Tensor after = da.forward(tape, q, ref, values, {4, 5});
  for (std::size_t i = 0; i < before.numel(); ++i) CHECK(after.at(i) == doctest::Approx(before.at(i)).epsilon(1e-12));
}

TEST_CASE("deformable attention rejects indivisible heads") {
  Rng rng(0);
  ParameterStore ps;
  CHECK_THROWS_AS(DeformableAttention(DeformAttnConfig{30, 4, 1, 4}, ps, rng, "x"), ConfigError);
  CHECK_THROWS_AS(MultiHeadSelfAttention(30, 8, ps, rng, "y"), ConfigError);
}

TEST_CASE("self-attention matches the dense formula") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    ParameterStore ps;
    MultiHeadSelfAttention mha(8, 8, ps, rng, "mha");
    lsn::testing::randomize(ps, rng, 0.5);
    const Tensor x = random_tensor(rng, {3, 8}, -1, 1, false);
    Tape tape(false);
    const Tensor got = mha.forward(tape, x);
    const auto want = lsn::testing::dense_self_attention(mha, x);
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(std::abs(got.at(i) - want[i]) <= 1e-10 * std::max(1.0, std::abs(want[i])));
    }
  }
}

TEST_CASE("self-attention special cases") {
  Rng rng(5);
  ParameterStore ps;
  MultiHeadSelfAttention mha(32, 8, ps, rng, "mha");
  lsn::testing::randomize(ps, rng, 0.5);
  Tape tape(false);
  SUBCASE("single query") {
    const Tensor x = random_tensor(rng, {1, 32}, -1, 1, false);
    const Tensor got = mha.forward(tape, x);
    const Tensor want = mha.output(tape, mha.value(tape, x));
    for (std::size_t i = 0; i < 32; ++i) CHECK(got.at(i) == doctest::Approx(want.at(i)).epsilon(1e-12));
  }
  SUBCASE("identical queries give identical rows") {
    const Tensor row = random_tensor(rng, {1, 32}, -1, 1, false);
    const Tensor x = ops::concat(tape, {row, random_tensor(rng, {1, 32}, -1, 1, false), row}, 0);
    const Tensor got = mha.forward(tape, x);
    for (std::size_t i = 0; i < 32; ++i) CHECK(got.at(i) == got.at(64 + i));
  }
}
