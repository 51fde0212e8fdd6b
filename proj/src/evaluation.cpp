#include "lsn/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <set>

#include "lsn/errors.hpp"

namespace lsn {
namespace {

double one_way(const Polyline& p, const Polyline& q) {
  double total = 0;
  for (const Vec2& a : p) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec2& b : q) {
      best = std::min(best, std::sqrt((a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y)));
    }
    total += best;
  }
  return total / static_cast<double>(p.size());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string threshold_key(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", t);
  return buf;
}

}  // namespace

std::string class_name(int class_id) {
  switch (class_id) {
    case kBackground: return "background";
    case kLaneSegment: return "lane_segment";
    case kPedestrianCrossing: return "ped_crossing";
    default: return "class" + std::to_string(class_id);
  }
}

double chamfer_distance(const Polyline& a, const Polyline& b) {
  if (a.empty() || b.empty()) throw ValueError("chamfer_distance: empty polyline");
  return 0.5 * (one_way(a, b) + one_way(b, a));
}

ApResult average_precision(std::span<const FrameLanes> frames, int class_id, double threshold) {
  struct Candidate {
    double score;
    std::size_t frame, index;
  };
  std::vector<Candidate> cands;
  ApResult r;
  // distances[f][pred][gt] for this class only
  std::vector<std::vector<std::vector<double>>> dist(frames.size());
  std::vector<std::vector<std::size_t>> gt_of(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    for (std::size_t g = 0; g < frames[f].groundtruth.size(); ++g) {
      if (frames[f].groundtruth[g].class_id == class_id) gt_of[f].push_back(g);
    }
    r.groundtruth += gt_of[f].size();
    const auto& preds = frames[f].predictions;
    dist[f].resize(preds.size());
    for (std::size_t p = 0; p < preds.size(); ++p) {
      if (preds[p].class_id != class_id) continue;
      cands.push_back({preds[p].score, f, p});
      for (std::size_t g : gt_of[f]) {
        dist[f][p].push_back(chamfer_distance(preds[p].centerline, frames[f].groundtruth[g].centerline));
      }
    }
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> taken(frames.size());
  for (std::size_t f = 0; f < frames.size(); ++f) taken[f].assign(gt_of[f].size(), false);
  std::vector<double> precision, recall;
  for (const Candidate& c : cands) {
    const auto& d = dist[c.frame][c.index];
    std::size_t best = d.size();
    for (std::size_t j = 0; j < d.size(); ++j) {
      if (taken[c.frame][j] || d[j] > threshold) continue;
      if (best == d.size() || d[j] < d[best]) best = j;
    }
    if (best < d.size()) {
      taken[c.frame][best] = true;
      ++r.tp;
    } else {
      ++r.fp;
    }
    precision.push_back(static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp));
    recall.push_back(r.groundtruth ? static_cast<double>(r.tp) / static_cast<double>(r.groundtruth) : 0.0);
  }
  r.fn = r.groundtruth - r.tp;
  if (r.groundtruth == 0) return r;
  // All-points interpolation: precision made monotone from the right, summed
  // over recall increments.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double prev_recall = 0;
  for (std::size_t i = 0; i < precision.size(); ++i) {
    r.ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return r;
}

double average_precision(std::span<const LaneSegment> predictions, std::span<const LaneSegment> groundtruth,
                         int class_id, double threshold) {
  const FrameLanes frame{{predictions.begin(), predictions.end()}, {groundtruth.begin(), groundtruth.end()}};
  return average_precision(std::span<const FrameLanes>(&frame, 1), class_id, threshold).ap;
}

std::size_t EvalReport::tp(std::size_t i) const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.threshold == thresholds.at(i) ? e.result.tp : 0;
  return n;
}

std::size_t EvalReport::fp(std::size_t i) const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.threshold == thresholds.at(i) ? e.result.fp : 0;
  return n;
}

std::size_t EvalReport::fn(std::size_t i) const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.threshold == thresholds.at(i) ? e.result.fn : 0;
  return n;
}

std::string EvalReport::to_text() const {
  std::string s = "map = " + fmt(map) + "\n";
  for (const auto& e : entries) {
    const std::string k = class_name(e.class_id) + ".t" + threshold_key(e.threshold);
    s += "ap." + k + " = " + fmt(e.result.ap) + "\n";
    s += "groundtruth." + k + " = " + std::to_string(e.result.groundtruth) + "\n";
  }
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    const std::string k = "counts.t" + threshold_key(thresholds[i]);
    s += k + ".tp = " + std::to_string(tp(i)) + "\n";
    s += k + ".fp = " + std::to_string(fp(i)) + "\n";
    s += k + ".fn = " + std::to_string(fn(i)) + "\n";
  }
  for (const auto& d : scenes) {
    s += "scene." + d.scene_id + ".groundtruth = " + std::to_string(d.groundtruth) + "\n";
    s += "scene." + d.scene_id + ".predictions = " + std::to_string(d.predictions) + "\n";
    s += "scene." + d.scene_id + ".covered = " + fmt(d.covered) + "\n";
  }
  return s;
}

EvalReport evaluate(const std::vector<ScenePredictions>& predictions, const std::vector<Scene>& groundtruth,
                    const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw InputError("evaluate: no thresholds");
  std::map<std::string, const ScenePredictions*> by_id;
  for (const auto& p : predictions) {
    if (!by_id.emplace(p.scene_id, &p).second) throw InputError("duplicate predictions for scene " + p.scene_id);
  }
  std::set<std::string> gt_ids;
  std::string missing, extra;
  for (const Scene& s : groundtruth) {
    gt_ids.insert(s.id);
    if (!by_id.count(s.id)) missing += " " + s.id;
  }
  for (const auto& [id, p] : by_id) {
    if (!gt_ids.count(id)) extra += " " + id;
  }
  if (!missing.empty() || !extra.empty()) {
    std::string msg = "scene ids do not align;";
    if (!missing.empty()) msg += " no predictions for:" + missing + ";";
    if (!extra.empty()) msg += " no groundtruth for:" + extra + ";";
    throw InputError(msg);
  }

  EvalReport rep;
  rep.thresholds = thresholds;
  std::vector<FrameLanes> frames;
  const double widest = *std::max_element(thresholds.begin(), thresholds.end());
  for (const Scene& s : groundtruth) {
    const ScenePredictions& p = *by_id.at(s.id);
    if (p.frames.size() != s.groundtruth.size()) {
      throw InputError("scene " + s.id + ": " + std::to_string(p.frames.size()) + " predicted frames, " +
                       std::to_string(s.groundtruth.size()) + " annotated");
    }
    SceneDiagnostics d;
    d.scene_id = s.id;
    std::size_t covered = 0;
    for (std::size_t t = 0; t < s.groundtruth.size(); ++t) {
      frames.push_back({p.frames[t], s.groundtruth[t]});
      d.groundtruth += s.groundtruth[t].size();
      d.predictions += p.frames[t].size();
      for (const LaneSegment& g : s.groundtruth[t]) {
        double best = std::numeric_limits<double>::infinity();
        for (const LaneSegment& q : p.frames[t]) {
          if (q.class_id == g.class_id) best = std::min(best, chamfer_distance(q.centerline, g.centerline));
        }
        covered += best <= widest;
      }
    }
    d.covered = d.groundtruth ? static_cast<double>(covered) / static_cast<double>(d.groundtruth) : 1.0;
    rep.scenes.push_back(std::move(d));
  }

  double sum = 0;
  std::size_t terms = 0;
  for (int c = kLaneSegment; c < kNumClasses; ++c) {
    for (double t : thresholds) {
      ClassThresholdAp e{c, t, average_precision(frames, c, t)};
      if (e.result.groundtruth > 0) {
        sum += e.result.ap;
        ++terms;
      }
      rep.entries.push_back(e);
    }
  }
  rep.map = terms ? sum / static_cast<double>(terms) : 0.0;
  return rep;
}

std::vector<ScenePredictions> oracle_predictions(const std::vector<Scene>& scenes) {
  std::vector<ScenePredictions> out;
  for (const Scene& s : scenes) {
    ScenePredictions p{s.id, s.groundtruth};
    for (auto& f : p.frames) {
      for (LaneSegment& seg : f) seg.score = 1.0;
    }
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace lsn
