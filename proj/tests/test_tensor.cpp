#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "gradient_cases.hpp"
#include "lsn/errors.hpp"
#include "lsn/ops.hpp"
#include "test_support.hpp"

using namespace lsn;
using lsn::testing::random_tensor;

namespace {

std::vector<Scalar> vals(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("tensor construction enforces the shape contract") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(Tensor::zeros({2, 0}), DimensionError);
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("matmul examples") {
  Tape tape;
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from({2, 2}, {3, 4, 5, 6});
  CHECK(vals(ops::matmul(tape, eye, b)) == std::vector<Scalar>{3, 4, 5, 6});
  Tensor row = Tensor::from({1, 2}, {1, 2});
  Tensor col = Tensor::from({2, 1}, {3, 4});
  CHECK(ops::matmul(tape, row, col).item() == 11);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  try {
    ops::matmul(tape, Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3] x [2,3]") != std::string::npos);
  }
}

TEST_CASE("softmax examples") {
  Tape tape;
  Tensor s = ops::softmax(tape, Tensor::from({3}, {0, 0, 0}), 0);
  for (Scalar v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0));

  Tensor big = ops::softmax(tape, Tensor::from({2}, {1000, 0}), -1);
  CHECK(big.at(0) == 1.0);
  CHECK(big.at(1) == 0.0);
  CHECK(std::isfinite(big.at(1)));
}

TEST_CASE("softmax sums to one along the reduced axis") {
  Rng rng(11);
  Tape tape(false);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor x = random_tensor(rng, {4, 6}, -50, 50, false);
    const int axis = trial % 2;
    Tensor y = ops::softmax(tape, x, axis);
    if (axis == 1) {
      for (std::size_t r = 0; r < 4; ++r) {
        Scalar total = 0;
        for (std::size_t c = 0; c < 6; ++c) {
          CHECK(y.at(r * 6 + c) >= 0);
          total += y.at(r * 6 + c);
        }
        CHECK(std::abs(total - 1) < 1e-9);
      }
    } else {
      for (std::size_t c = 0; c < 6; ++c) {
        Scalar total = 0;
        for (std::size_t r = 0; r < 4; ++r) total += y.at(r * 6 + c);
        CHECK(std::abs(total - 1) < 1e-9);
      }
    }
  }
}

TEST_CASE("conv2d examples") {
  Tape tape;
  Tensor ones = Tensor::full({1, 3, 3}, 1);
  Tensor k = Tensor::from({1, 1, 1, 1}, {2});
  Tensor y = ops::conv2d(tape, ones, k, Tensor(), 1, 0);
  CHECK(y.shape() == Shape{1, 3, 3});
  for (Scalar v : y.data()) CHECK(v == 2);

  Tensor y2 = ops::conv2d(tape, Tensor::full({1, 4, 4}, 1), Tensor::full({1, 1, 2, 2}, 1),
                          Tensor(), 2, 0);
  CHECK(y2.shape() == Shape{1, 2, 2});

  CHECK_THROWS_AS(ops::conv2d(tape, Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 1, 3, 3}),
                              Tensor(), 1, 0),
                  DimensionError);
}

TEST_CASE("conv2d is a cross-correlation") {
  // A kernel with a single 1 in the top-left picks the top-left neighbour.
  Tape tape;
  Tensor x = Tensor::from({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor k = Tensor::from({1, 1, 3, 3}, {1, 0, 0, 0, 0, 0, 0, 0, 0});
  Tensor y = ops::conv2d(tape, x, k, Tensor(), 1, 1);
  CHECK(y.at(4) == 1);  // centre output reads x[0,0]
  CHECK(y.at(8) == 5);
}

TEST_CASE("bilinear_sample examples") {
  Tape tape;
  Rng rng(5);
  Tensor map = random_tensor(rng, {2, 3, 4}, -1, 1, false);
  // Centre of cell (row 1, col 2).
  Tensor pts = Tensor::from({2, 2}, {2.5 / 4.0, 1.5 / 3.0, -0.5, 0.5});
  Tensor s = ops::bilinear_sample(tape, map, pts);
  CHECK(s.shape() == Shape{2, 2});
  CHECK(s.at(0) == map.at(0 * 12 + 1 * 4 + 2));
  CHECK(s.at(1) == map.at(1 * 12 + 1 * 4 + 2));
  CHECK(s.at(2) == 0);
  CHECK(s.at(3) == 0);
}

TEST_CASE("bilinear_sample zeroes points just outside the unit square") {
  Tape tape;
  Tensor map = Tensor::full({1, 2, 2}, 1);
  Tensor s = ops::bilinear_sample(tape, map, Tensor::from({2, 2}, {-0.01, 0.5, 0.5, 1.01}));
  CHECK(s.at(0) == 0);
  CHECK(s.at(1) == 0);
}

TEST_CASE("layer_norm, relu examples") {
  Tape tape;
  Tensor x = Tensor::full({1, 4}, 3);
  Tensor y = ops::layer_norm(tape, x, Tensor::full({4}, 1), Tensor::zeros({4}));
  for (Scalar v : y.data()) CHECK(v == 0);
  Tensor r = ops::relu(tape, Tensor::from({3}, {-1, 0, 2}));
  CHECK(vals(r) == std::vector<Scalar>{0, 0, 2});
}

TEST_CASE("gradient suite: every op against central differences") {
  for (const auto& op : lsn::testing::gradient_ops()) {
    Rng rng(1234);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      auto c = op.make(rng);
      auto res = lsn::testing::grad_check(c.fn, c.inputs);
      REQUIRE(res.rel_error.size() == c.tolerance.size());
      for (std::size_t i = 0; i < res.rel_error.size(); ++i) {
        CHECK_MESSAGE(res.rel_error[i] < c.tolerance[i], op.name, " trial ", trial, " input ", i,
                      " rel err ", res.rel_error[i]);
        worst = std::max(worst, res.rel_error[i] / c.tolerance[i]);
      }
    }
    MESSAGE(op.name, ": worst error / tolerance = ", worst);
  }
}

TEST_CASE("tape visits each node once and refuses a second backward") {
  Tape tape;
  Tensor a = Tensor::from({2}, {1, 2}, true);
  Tensor b = ops::mul(tape, a, a);
  Tensor c = ops::sum(tape, b);
  tape.backward(c);
  CHECK(tape.nodes_visited() == tape.size());
  CHECK(a.grad()[0] == 2);
  CHECK(a.grad()[1] == 4);
  CHECK_THROWS_AS(tape.backward(c), std::logic_error);
  tape.reset();
  CHECK(tape.size() == 0);
}

TEST_CASE("gradients accumulate across tapes until cleared") {
  Tensor a = Tensor::from({1}, {3}, true);
  for (int i = 0; i < 2; ++i) {
    Tape tape;
    tape.backward(ops::scale(tape, a, 2));
  }
  CHECK(a.grad()[0] == 4);
  a.zero_grad();
  CHECK_FALSE(a.has_grad());
}

TEST_CASE("disabled tape records nothing") {
  Tape tape(false);
  Tensor a = Tensor::from({1}, {3}, true);
  Tensor b = ops::scale(tape, a, 2);
  CHECK_FALSE(b.requires_grad());
  CHECK(tape.size() == 0);
}

TEST_CASE("finite checking flags NaN") {
  Tape tape;
  tape.set_check_finite(true);
  Tensor a = Tensor::from({1}, {-1}, true);
  CHECK_THROWS_AS(ops::rsqrt(tape, a, 0), ValueError);
}

TEST_CASE("multiply-accumulate accounting") {
  Tape tape(false);
  ops::matmul(tape, Tensor::zeros({2, 3}), Tensor::zeros({3, 4}));
  CHECK(tape.macs() == 24);
  ops::conv2d(tape, Tensor::zeros({2, 4, 4}), Tensor::zeros({3, 2, 1, 1}), Tensor(), 1, 0);
  CHECK(tape.macs() == 24 + 96);
}
