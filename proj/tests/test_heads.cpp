#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lsn/errors.hpp"
#include "lsn/heads_loss.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace lsn;
using lsn::testing::random_tensor;

namespace {

Polyline straight(Vec2 a, Vec2 b, std::size_t p) {
  Polyline l(p);
  for (std::size_t i = 0; i < p; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(p - 1);
    l[i] = {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
  }
  return l;
}

LaneSegment segment_along_x(double y, double x0, double x1, std::size_t p, int cls = kLaneSegment) {
  LaneSegment s;
  s.centerline = straight({x0, y}, {x1, y}, p);
  s.left_boundary = straight({x0, y + 1.75}, {x1, y + 1.75}, p);
  s.right_boundary = straight({x0, y - 1.75}, {x1, y - 1.75}, p);
  s.class_id = cls;
  return s;
}

Tensor polylines_tensor(const std::vector<Polyline>& lines) {
  std::vector<Scalar> v;
  for (const auto& l : lines) {
    for (const Vec2& p : l) {
      v.push_back(static_cast<Scalar>(p.x));
      v.push_back(static_cast<Scalar>(p.y));
    }
  }
  return Tensor::from({lines.size(), lines.front().size(), 2}, v);
}

// Head outputs built directly from segments, with the given logits.
LaneOutputs outputs_from(const std::vector<LaneSegment>& segs, const std::vector<Scalar>& logits) {
  std::vector<Polyline> c, l, r;
  for (const auto& s : segs) {
    c.push_back(s.centerline);
    l.push_back(s.left_boundary);
    r.push_back(s.right_boundary);
  }
  return {Tensor::from({segs.size(), static_cast<std::size_t>(kNumClasses)}, logits), polylines_tensor(c),
          polylines_tensor(l), polylines_tensor(r)};
}

}  // namespace

TEST_CASE("prediction head geometry") {
  HeadConfig cfg;
  Rng rng(1);
  ParameterStore ps;
  PredictionHead head(cfg, ps, rng);
  for (Scalar& v : head.geometry.fc2.weight.mutable_data()) v = 0;
  for (Scalar& v : head.geometry.fc2.bias.mutable_data()) v = 0;
  const std::size_t nq = 20;
  const LaneQuerySet q{random_tensor(rng, {nq, cfg.dim}, -1, 1, false), random_tensor(rng, {nq, 2}, -2, 2, false)};
  Tape tape(false);
  const LaneOutputs out = head.forward(tape, q);
  CHECK(out.centerline.shape() == Shape{nq, 10, 2});
  const BevExtent& e = cfg.extent;
  for (std::size_t a = 0; a < nq; ++a) {
    const double x = e.x_min + e.length_x() / (1 + std::exp(-q.ref_logits.at(2 * a)));
    const double y = e.y_min + e.length_y() / (1 + std::exp(-q.ref_logits.at(2 * a + 1)));
    for (std::size_t i = 0; i < 10; ++i) {
      CHECK(out.centerline.at((a * 10 + i) * 2) == doctest::Approx(x).epsilon(1e-12));
      CHECK(out.centerline.at((a * 10 + i) * 2 + 1) == doctest::Approx(y).epsilon(1e-12));
    }
  }
  const auto segs = predict(out);
  CHECK(segs.size() == nq);
  const auto probs = class_probabilities(out.logits);
  for (std::size_t a = 0; a < nq; ++a) {
    double s = 0;
    for (double p : probs[a]) s += p;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(segs[a].class_id != kBackground);
    CHECK(segs[a].score == doctest::Approx(probs[a][static_cast<std::size_t>(segs[a].class_id)]));
  }
}

TEST_CASE("boundaries sit a half-width either side of a straight centerline") {
  HeadConfig cfg;
  cfg.points_per_lane = 4;
  Rng rng(2);
  ParameterStore ps;
  PredictionHead head(cfg, ps, rng);
  // Embedding zero -> geometry output is fc2.bias; choose deltas along x.
  for (Scalar& v : head.geometry.fc2.weight.mutable_data()) v = 0;
  auto b = head.geometry.fc2.bias.mutable_data();
  for (std::size_t i = 0; i < 4; ++i) {
    b[2 * i] = static_cast<Scalar>(-0.6 + 0.4 * static_cast<double>(i));
    b[2 * i + 1] = 0;
    b[8 + i] = static_cast<Scalar>(0.25);
  }
  const LaneQuerySet q{Tensor::zeros({1, cfg.dim}), Tensor::zeros({1, 2})};
  Tape tape(false);
  const LaneOutputs out = head.forward(tape, q);
  for (std::size_t i = 0; i < 4; ++i) {
    const double cy = out.centerline.at(2 * i + 1);
    const double dy = out.left.at(2 * i + 1) - cy;
    // tangent length in meters is large, so the eps term is negligible
    CHECK(dy == doctest::Approx(2.0).epsilon(1e-3));
    CHECK(out.right.at(2 * i + 1) - cy == doctest::Approx(-dy).epsilon(1e-12));
    CHECK(out.left.at(2 * i) == doctest::Approx(out.centerline.at(2 * i)).epsilon(1e-12));
  }
}

TEST_CASE("hungarian matching") {
  SUBCASE("worked 3x3 example") {
    const std::vector<double> cost{4, 1, 3, 2, 0, 5, 3, 2, 2};
    const MatchResult m = hungarian_match(cost, 3, 3);
    CHECK(m.total_cost == 5);
    CHECK(m.assignment == std::vector<std::size_t>{1, 0, 2});
  }
  SUBCASE("random rectangular problems against enumeration") {
    Rng rng(3);
    int cases = 0;
    for (int trial = 0; trial < 1200; ++trial) {
      const std::size_t cols = 1 + static_cast<std::size_t>(rng.uniform_int(0, 6));
      const std::size_t rows = 1 + static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(cols) - 1));
      std::vector<double> cost(rows * cols);
      for (double& c : cost) c = trial % 3 == 0 ? rng.uniform_int(0, 3) : rng.uniform(-5, 5);
      const MatchResult m = hungarian_match(cost, rows, cols);
      const double best = lsn::testing::brute_force_assignment(cost, rows, cols);
      CHECK(m.total_cost == doctest::Approx(best).epsilon(1e-12));
      std::vector<bool> used(cols, false);
      for (std::size_t c : m.assignment) {
        CHECK(c < cols);
        CHECK_FALSE(used[c]);
        used[c] = true;
      }
      ++cases;
    }
    CHECK(cases >= 1000);
  }
  SUBCASE("adding a constant to a row keeps the assignment") {
    Rng rng(4);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> cost(4 * 6);
      for (double& c : cost) c = rng.uniform(0, 10);
      const MatchResult a = hungarian_match(cost, 4, 6);
      const std::size_t r = static_cast<std::size_t>(rng.uniform_int(0, 3));
      for (std::size_t j = 0; j < 6; ++j) cost[r * 6 + j] += 7.5;
      const MatchResult b = hungarian_match(cost, 4, 6);
      CHECK(a.assignment == b.assignment);
      CHECK(b.total_cost == doctest::Approx(a.total_cost + 7.5));
    }
  }
  SUBCASE("errors and the empty problem") {
    CHECK(hungarian_match(std::vector<double>{}, 0, 4).assignment.empty());
    CHECK_THROWS_AS(hungarian_match(std::vector<double>(6, 1.0), 3, 2), CapacityError);
    CHECK_THROWS_AS(hungarian_match(std::vector<double>{1, NAN}, 1, 2), ValueError);
    CHECK_THROWS_AS(hungarian_match(std::vector<double>{1, 2, 3}, 1, 2), DimensionError);
    CHECK(hungarian_match(Tensor::from({2, 2}, {1, 0, 0, 1})).assignment == std::vector<std::size_t>{1, 0});
  }
}

TEST_CASE("matching cost") {
  const LossWeights w;
  const LaneSegment gt = segment_along_x(0, 0, 9, 4);
  const std::vector<double> probs{0.2, 0.7, 0.1};
  CHECK(match_cost(gt, probs, gt, w) == doctest::Approx(-2.0 * 0.7));
  // shift every point by (0.5, 0): each mean L1 is 0.5
  LaneSegment moved = gt;
  for (Polyline* l : {&moved.centerline, &moved.left_boundary, &moved.right_boundary}) {
    for (Vec2& p : *l) p.x += 0.5;
  }
  CHECK(match_cost(moved, probs, gt, w) == doctest::Approx(-1.4 + 5 * 0.5 + 2.5 * 0.5));
  LaneSegment crossing = gt;
  crossing.class_id = kPedestrianCrossing;
  CHECK(match_cost(gt, probs, crossing, w) == doctest::Approx(-0.2));
}

TEST_CASE("training loss") {
  BevExtent e;  // 48 m x 24 m
  const LossWeights w;
  const std::size_t p = 4;
  const LaneSegment gt = segment_along_x(3, -10, 20, p);

  SUBCASE("a perfect, confident prediction costs almost nothing") {
    const LaneSegment other = segment_along_x(-8, -20, 0, p);
    const LaneOutputs out = outputs_from({other, gt}, {30, -30, -30, -30, 30, -30});
    Tape tape;
    const LossResult r = total_loss(tape, {out, out}, {gt}, e, w);
    CHECK(r.breakdown.total < 1e-10);
    CHECK(r.matches.size() == 2);
    CHECK(r.matches[0].assignment == std::vector<std::size_t>{1});
  }
  SUBCASE("empty groundtruth trains every query to background") {
    const LaneOutputs out = outputs_from({gt, gt}, {0, 0, 0, 1, 0, 0});
    Tape tape;
    const LossResult r = total_loss(tape, {out}, {}, e, w);
    const double ce0 = std::log(3.0), ce1 = -std::log(std::exp(1.0) / (std::exp(1.0) + 2));
    CHECK(r.breakdown.total == doctest::Approx(2.0 * 0.5 * (ce0 + ce1)).epsilon(1e-12));
    CHECK(r.breakdown.pts == 0);
  }
  SUBCASE("hand-computed single-groundtruth case") {
    LaneSegment near = gt;
    for (Polyline* l : {&near.centerline, &near.left_boundary, &near.right_boundary}) {
      for (Vec2& q : *l) q.y += 1.5;  // 1.5 m off in y
    }
    const LaneSegment far = segment_along_x(-12, -20, 0, p);
    const LaneOutputs out = outputs_from({far, near}, {0, 0, 0, 0, 0, 0});
    Tape tape;
    const LossResult r = total_loss(tape, {out}, {gt}, e, w);
    REQUIRE(r.matches[0].assignment == std::vector<std::size_t>{1});
    // CE: uniform logits, weights 0.1 (background slot) and 1 (matched slot)
    const double ce = std::log(3.0);
    const double dy = 1.5 / e.length_y();
    CHECK(r.breakdown.cls == doctest::Approx(2.0 * ce).epsilon(1e-12));
    CHECK(r.breakdown.pts == doctest::Approx(5.0 * dy).epsilon(1e-9));
    CHECK(r.breakdown.bnd == doctest::Approx(2.5 * dy).epsilon(1e-9));
    CHECK(r.breakdown.total == doctest::Approx(2.0 * ce + 7.5 * dy).epsilon(1e-9));
  }
  SUBCASE("deep supervision averages layers") {
    const LaneOutputs good = outputs_from({gt}, {-30, 30, -30});
    const LaneOutputs bad = outputs_from({gt}, {0, 0, 0});
    Tape tape;
    const double lg = total_loss(tape, {good}, {gt}, e, w).breakdown.total;
    const double lb = total_loss(tape, {bad}, {gt}, e, w).breakdown.total;
    CHECK(total_loss(tape, {good, bad}, {gt}, e, w).breakdown.total == doctest::Approx(0.5 * (lg + lb)));
  }
  SUBCASE("more groundtruth than queries") {
    const LaneOutputs out = outputs_from({gt}, {0, 0, 0});
    Tape tape;
    CHECK_THROWS_AS(total_loss(tape, {out}, {gt, gt}, e, w), CapacityError);
  }
}

TEST_CASE("loss gradient through the head matches finite differences") {
  HeadConfig cfg;
  cfg.dim = 6;
  cfg.points_per_lane = 3;
  Rng rng(5);
  ParameterStore ps;
  PredictionHead head(cfg, ps, rng);
  lsn::testing::randomize(ps, rng, 0.3);
  const std::vector<LaneSegment> gt{segment_along_x(2, -5, 10, 3), segment_along_x(-6, 0, 12, 3, kPedestrianCrossing)};
  const Tensor emb = random_tensor(rng, {4, 6}, -1, 1, true);
  const Tensor refs = random_tensor(rng, {4, 2}, -1, 1, true);
  auto fn = [&](Tape& tape, const std::vector<Tensor>& in) {
    const LaneOutputs o = head.forward(tape, {in[0], in[1]});
    return total_loss(tape, {o}, gt, cfg.extent, LossWeights{}).loss;
  };
  const auto res = lsn::testing::grad_check(fn, {emb, refs}, 1e-6);
  CHECK(res.worst() < 1e-4);
}
