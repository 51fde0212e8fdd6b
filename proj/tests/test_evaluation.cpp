#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lsn/errors.hpp"
#include "lsn/evaluation.hpp"
#include "oracles.hpp"

using namespace lsn;

namespace {

Polyline line_y(double y, double x0 = 0, double x1 = 9, std::size_t p = 10) {
  Polyline l(p);
  for (std::size_t i = 0; i < p; ++i) l[i] = {x0 + (x1 - x0) * static_cast<double>(i) / static_cast<double>(p - 1), y};
  return l;
}

LaneSegment seg(double y, int cls = kLaneSegment, double score = 1.0) {
  LaneSegment s;
  s.centerline = line_y(y);
  s.left_boundary = line_y(y + 1.75);
  s.right_boundary = line_y(y - 1.75);
  s.class_id = cls;
  s.score = score;
  return s;
}

Scene scene_with(const std::string& id, std::vector<std::vector<LaneSegment>> gt) {
  Scene s;
  s.id = id;
  s.groundtruth = std::move(gt);
  s.frames.resize(s.groundtruth.size());
  return s;
}

}  // namespace

TEST_CASE("chamfer distance") {
  CHECK(chamfer_distance(line_y(0), line_y(0)) == 0);
  CHECK(chamfer_distance(line_y(0), line_y(1)) == doctest::Approx(1.0).epsilon(1e-15));
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    Polyline a(5), b(5);
    for (auto& p : a) p = {rng.uniform(-20, 20), rng.uniform(-10, 10)};
    for (auto& p : b) p = {rng.uniform(-20, 20), rng.uniform(-10, 10)};
    CHECK(chamfer_distance(a, b) == lsn::testing::chamfer_oracle(a, b));
    CHECK(chamfer_distance(a, b) == chamfer_distance(b, a));
  }
  CHECK_THROWS_AS(chamfer_distance({}, line_y(0)), ValueError);
}

TEST_CASE("average precision examples") {
  const std::vector<LaneSegment> gts{seg(0), seg(6)};
  SUBCASE("predictions equal to groundtruth") {
    CHECK(average_precision(gts, gts, kLaneSegment, 0.5) == 1.0);
  }
  SUBCASE("no predictions") {
    CHECK(average_precision(std::vector<LaneSegment>{}, gts, kLaneSegment, 1.5) == 0.0);
  }
  SUBCASE("true positive, false positive, true positive") {
    const std::vector<LaneSegment> preds{seg(0, kLaneSegment, 0.9), seg(-8, kLaneSegment, 0.8),
                                         seg(6.2, kLaneSegment, 0.7)};
    // precision 1, 1/2, 2/3 at recall 1/2, 1/2, 1; envelope 1, 2/3, 2/3
    const double want = 0.5 * 1.0 + 0.5 * (2.0 / 3.0);
    CHECK(average_precision(preds, gts, kLaneSegment, 0.5) == doctest::Approx(want).epsilon(1e-15));
  }
  SUBCASE("duplicate prediction of one groundtruth counts as a false positive") {
    const std::vector<LaneSegment> one{seg(0)};
    const std::vector<LaneSegment> preds{seg(0, kLaneSegment, 0.9), seg(0.1, kLaneSegment, 0.8)};
    const FrameLanes f{preds, one};
    const ApResult r = average_precision(std::span<const FrameLanes>(&f, 1), kLaneSegment, 1.0);
    CHECK(r.tp == 1);
    CHECK(r.fp == 1);
    CHECK(r.ap == 1.0);
  }
  SUBCASE("other classes are ignored") {
    const std::vector<LaneSegment> preds{seg(0, kPedestrianCrossing), seg(6, kPedestrianCrossing)};
    CHECK(average_precision(preds, gts, kLaneSegment, 1.5) == 0.0);
    CHECK(average_precision(preds, gts, kPedestrianCrossing, 1.5) == 0.0);
  }
}

TEST_CASE("average precision properties") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<FrameLanes> frames(3);
    for (auto& f : frames) {
      const int ng = rng.uniform_int(0, 4), np = rng.uniform_int(0, 6);
      for (int i = 0; i < ng; ++i) f.groundtruth.push_back(seg(rng.uniform(-10, 10), rng.uniform_int(1, 2)));
      for (int i = 0; i < np; ++i) {
        f.predictions.push_back(seg(rng.uniform(-10, 10), rng.uniform_int(1, 2), rng.uniform(0.01, 1)));
      }
    }
    for (int c = 1; c <= 2; ++c) {
      const double a05 = average_precision(frames, c, 0.5).ap;
      const double a10 = average_precision(frames, c, 1.0).ap;
      const double a15 = average_precision(frames, c, 1.5).ap;
      CHECK(a05 <= a10);
      CHECK(a10 <= a15);
      CHECK(a05 >= 0.0);
      CHECK(a15 <= 1.0);
      // strictly increasing transform of the scores
      auto moved = frames;
      for (auto& f : moved) {
        for (auto& p : f.predictions) p.score = std::exp(3 * p.score) - 7;
      }
      CHECK(average_precision(moved, c, 1.0).ap == a10);
    }
  }
}

TEST_CASE("evaluate") {
  const std::vector<Scene> scenes{
      scene_with("a", {{seg(0), seg(4), seg(-3, kPedestrianCrossing)}, {seg(1)}}),
      scene_with("b", {{seg(2), seg(-6, kPedestrianCrossing)}}),
  };
  SUBCASE("perfect predictions") {
    const EvalReport r = evaluate(oracle_predictions(scenes), scenes);
    CHECK(r.map == 1.0);
    CHECK(r.entries.size() == 6);
    CHECK(r.tp(0) == 6);
    CHECK(r.fn(2) == 0);
  }
  SUBCASE("no predictions") {
    std::vector<ScenePredictions> none{{"a", {{}, {}}}, {"b", {{}}}};
    const EvalReport r = evaluate(none, scenes);
    CHECK(r.map == 0.0);
    CHECK(r.fn(1) == 6);
  }
  SUBCASE("two-scene fixture against a hand computation") {
    std::vector<ScenePredictions> preds{
        {"a",
         {{seg(0.3, kLaneSegment, 0.9), seg(4.8, kLaneSegment, 0.6), seg(-3, kPedestrianCrossing, 0.5)},
          {seg(1, kLaneSegment, 0.7)}}},
        {"b", {{seg(9, kLaneSegment, 0.8), seg(-7.2, kPedestrianCrossing, 0.4)}}},
    };
    const EvalReport r = evaluate(preds, scenes);
    // Lane segments, 4 groundtruth; score order 0.9 (d .3), 0.8 (FP), 0.7 (d 0),
    // 0.6 (d .8). Crossings, 2 groundtruth; 0.5 (d 0), 0.4 (d 1.2).
    const double lane05 = 0.25 * 1 + 0.25 * (2.0 / 3);                       // TP FP TP FP
    const double lane10 = 0.25 * 1 + 0.25 * (3.0 / 4) + 0.25 * (3.0 / 4);    // TP FP TP TP
    const double lane15 = lane10;
    const double ped05 = 0.5, ped10 = 0.5, ped15 = 1.0;
    const double want = (lane05 + lane10 + lane15 + ped05 + ped10 + ped15) / 6;
    CHECK(r.entries[0].result.ap == doctest::Approx(lane05).epsilon(1e-15));
    CHECK(r.entries[1].result.ap == doctest::Approx(lane10).epsilon(1e-15));
    CHECK(r.entries[5].result.ap == doctest::Approx(ped15).epsilon(1e-15));
    CHECK(r.map == doctest::Approx(want).epsilon(1e-15));
    double mean = 0;
    for (const auto& e : r.entries) mean += e.result.ap;
    CHECK(r.map == doctest::Approx(mean / 6).epsilon(1e-15));
    const std::string text = r.to_text();
    CHECK(text.rfind("map = ", 0) == 0);
    CHECK(text.find("ap.lane_segment.t0.5 = ") != std::string::npos);
    CHECK(text.find("ap.ped_crossing.t1.5 = 1\n") != std::string::npos);
    CHECK(text.find("scene.b.groundtruth = 2\n") != std::string::npos);
    CHECK(evaluate(preds, scenes).to_text() == text);
  }
  SUBCASE("classes without groundtruth drop out of the mean") {
    const std::vector<Scene> lanes_only{scene_with("c", {{seg(0)}})};
    CHECK(evaluate(oracle_predictions(lanes_only), lanes_only).map == 1.0);
  }
  SUBCASE("misaligned scene ids") {
    std::vector<ScenePredictions> preds{{"a", {{}, {}}}, {"z", {{}}}};
    try {
      evaluate(preds, scenes);
      FAIL("expected InputError");
    } catch (const InputError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("b") != std::string::npos);
      CHECK(msg.find("z") != std::string::npos);
    }
    std::vector<ScenePredictions> short_frames{{"a", {{}}}, {"b", {{}}}};
    CHECK_THROWS_AS(evaluate(short_frames, scenes), InputError);
  }
}
