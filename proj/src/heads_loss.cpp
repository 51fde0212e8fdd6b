#include "lsn/heads_loss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lsn/errors.hpp"
#include "lsn/ops.hpp"

namespace lsn {
namespace {

constexpr Scalar kTangentEps = Scalar(1e-2);  // m^2

// [N, P, 2] tensor filled with (x_value, y_value) pairs.
Tensor xy_constant(std::size_t n, std::size_t p, double xv, double yv) {
  std::vector<Scalar> v(n * p * 2);
  for (std::size_t i = 0; i < v.size(); i += 2) {
    v[i] = static_cast<Scalar>(xv);
    v[i + 1] = static_cast<Scalar>(yv);
  }
  return Tensor::from({n, p, 2}, std::move(v));
}

Polyline polyline_at(const Tensor& t, std::size_t q, double sx = 1, double sy = 1) {
  const std::size_t p = t.dim(1);
  const auto d = t.data();
  Polyline line(p);
  for (std::size_t i = 0; i < p; ++i) {
    line[i] = {d[(q * p + i) * 2] * sx, d[(q * p + i) * 2 + 1] * sy};
  }
  return line;
}

Tensor gt_rows(const std::vector<LaneSegment>& gt, Polyline LaneSegment::*line, std::size_t p,
               const BevExtent& e) {
  std::vector<Scalar> v;
  v.reserve(gt.size() * p * 2);
  for (const LaneSegment& s : gt) {
    const Polyline& l = s.*line;
    if (l.size() != p) {
      throw DimensionError("groundtruth polyline has " + std::to_string(l.size()) + " points, head predicts " +
                           std::to_string(p));
    }
    for (const Vec2& pt : l) {
      v.push_back(static_cast<Scalar>(pt.x / e.length_x()));
      v.push_back(static_cast<Scalar>(pt.y / e.length_y()));
    }
  }
  return Tensor::from({gt.size(), p * 2}, std::move(v));
}

}  // namespace

PredictionHead::PredictionHead(const HeadConfig& cfg, ParameterStore& params, Rng& rng,
                               const std::string& name)
    : cfg_(cfg) {
  classifier = Linear::make(params, rng, name + ".cls", cfg.dim, kNumClasses);
  geometry = FeedForward::make(params, rng, name + ".geometry", cfg.dim, cfg.dim, Linear::Init::kSmall,
                               cfg.points_per_lane * 3);
}

LaneOutputs PredictionHead::forward(Tape& tape, const LaneQuerySet& q) const {
  const std::size_t n = q.embeddings.dim(0), p = cfg_.points_per_lane;
  LaneOutputs out;
  out.logits = classifier(tape, q.embeddings);
  const Tensor g = geometry(tape, q.embeddings);

  std::vector<std::size_t> delta_idx(n * p * 2), ref_idx(n * p * 2), width_idx(n * p);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t i = 0; i < p; ++i) {
      for (std::size_t c = 0; c < 2; ++c) {
        delta_idx[(a * p + i) * 2 + c] = a * 3 * p + i * 2 + c;
        ref_idx[(a * p + i) * 2 + c] = a * 2 + c;
      }
      width_idx[a * p + i] = a * 3 * p + 2 * p + i;
    }
  }
  const Shape pts{n, p, 2};
  const Tensor uv = ops::sigmoid(tape, ops::add(tape, ops::gather(tape, g, std::move(delta_idx), pts),
                                                ops::gather(tape, q.ref_logits, std::move(ref_idx), pts)));
  const BevExtent& e = cfg_.extent;
  const Tensor c = ops::add(tape, ops::mul(tape, uv, xy_constant(n, p, e.length_x(), e.length_y())),
                            xy_constant(n, p, e.x_min, e.y_min));

  // Tangent by central differences (one-sided at the ends), then the left
  // normal (-t_y, t_x) / sqrt(|t|^2 + eps).
  std::vector<std::size_t> next(n * p * 2), prev(n * p * 2), swap(n * p * 2), sq_x(n * p), sq_y(n * p),
      per_point(n * p * 2);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t i = 0; i < p; ++i) {
      const std::size_t in = std::min(i + 1, p - 1), ip = i == 0 ? 0 : i - 1;
      const std::size_t k = a * p + i;
      for (std::size_t ch = 0; ch < 2; ++ch) {
        next[k * 2 + ch] = (a * p + in) * 2 + ch;
        prev[k * 2 + ch] = (a * p + ip) * 2 + ch;
        swap[k * 2 + ch] = k * 2 + (1 - ch);
        per_point[k * 2 + ch] = k;
      }
      sq_x[k] = k * 2;
      sq_y[k] = k * 2 + 1;
    }
  }
  const Tensor t = ops::sub(tape, ops::gather(tape, c, std::move(next), pts), ops::gather(tape, c, std::move(prev), pts));
  const Tensor normal = ops::mul(tape, ops::gather(tape, t, std::move(swap), pts), xy_constant(n, p, -1, 1));
  const Tensor t2 = ops::mul(tape, t, t);
  const Tensor len2 = ops::add(tape, ops::gather(tape, t2, std::move(sq_x), {n, p}),
                               ops::gather(tape, t2, std::move(sq_y), {n, p}));
  std::vector<std::size_t> w_idx = width_idx;
  const Tensor half_width = ops::add_scalar(tape, ops::gather(tape, g, std::move(w_idx), {n, p}),
                                            static_cast<Scalar>(cfg_.half_width_prior));
  const Tensor factor = ops::mul(tape, half_width, ops::rsqrt(tape, len2, kTangentEps));
  const Tensor offset = ops::mul(tape, normal, ops::gather(tape, factor, std::move(per_point), pts));
  out.centerline = c;
  out.left = ops::add(tape, c, offset);
  out.right = ops::sub(tape, c, offset);
  return out;
}

std::vector<std::vector<double>> class_probabilities(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  const auto d = logits.data();
  std::vector<std::vector<double>> out(n, std::vector<double>(k));
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(d[i * k + j]));
    double z = 0;
    for (std::size_t j = 0; j < k; ++j) z += out[i][j] = std::exp(static_cast<double>(d[i * k + j]) - mx);
    for (double& v : out[i]) v /= z;
  }
  return out;
}

std::vector<LaneSegment> predict(const LaneOutputs& out) {
  const auto probs = class_probabilities(out.logits);
  std::vector<LaneSegment> segs(probs.size());
  for (std::size_t q = 0; q < probs.size(); ++q) {
    LaneSegment& s = segs[q];
    s.class_id = kLaneSegment;
    for (int c = kLaneSegment + 1; c < kNumClasses; ++c) {
      if (probs[q][static_cast<std::size_t>(c)] > probs[q][static_cast<std::size_t>(s.class_id)]) s.class_id = c;
    }
    s.score = probs[q][static_cast<std::size_t>(s.class_id)];
    s.centerline = polyline_at(out.centerline, q);
    s.left_boundary = polyline_at(out.left, q);
    s.right_boundary = polyline_at(out.right, q);
  }
  return segs;
}

MatchResult hungarian_match(std::span<const double> cost, std::size_t rows, std::size_t cols) {
  if (cost.size() != rows * cols) throw DimensionError("cost matrix size does not match its shape");
  if (rows > cols) {
    throw CapacityError(std::to_string(rows) + " groundtruth segments exceed " + std::to_string(cols) +
                        " prediction slots");
  }
  for (double c : cost) {
    if (!std::isfinite(c)) throw ValueError("non-finite matching cost");
  }
  MatchResult r;
  if (rows == 0) return r;
  // Shortest augmenting paths with row/column potentials (1-based, column 0
  // is the virtual start).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(rows + 1, 0), v(cols + 1, 0);
  std::vector<std::size_t> p(cols + 1, 0), way(cols + 1, 0);
  for (std::size_t i = 1; i <= rows; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(cols + 1, inf);
    std::vector<bool> used(cols + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  r.assignment.assign(rows, 0);
  for (std::size_t j = 1; j <= cols; ++j) {
    if (p[j] != 0) r.assignment[p[j] - 1] = j - 1;
  }
  for (std::size_t i = 0; i < rows; ++i) r.total_cost += cost[i * cols + r.assignment[i]];
  return r;
}

MatchResult hungarian_match(const Tensor& cost) {
  if (cost.ndim() != 2) throw DimensionError("cost matrix must be 2-D, got " + shape_str(cost.shape()));
  std::vector<double> c(cost.data().begin(), cost.data().end());
  return hungarian_match(c, cost.dim(0), cost.dim(1));
}

double mean_l1(const Polyline& a, const Polyline& b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("polylines differ in length");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i].x - b[i].x) + std::abs(a[i].y - b[i].y);
  return s / static_cast<double>(a.size());
}

double match_cost(const LaneSegment& pred, std::span<const double> class_probs, const LaneSegment& gt,
                  const LossWeights& w) {
  const double p = class_probs[static_cast<std::size_t>(gt.class_id)];
  const double bnd = 0.5 * (mean_l1(pred.left_boundary, gt.left_boundary) +
                            mean_l1(pred.right_boundary, gt.right_boundary));
  return -w.cls * p + w.pts * mean_l1(pred.centerline, gt.centerline) + w.bnd * bnd;
}

LossResult total_loss(Tape& tape, const std::vector<LaneOutputs>& layer_outputs,
                      const std::vector<LaneSegment>& groundtruth, const BevExtent& extent,
                      const LossWeights& w) {
  if (layer_outputs.empty()) throw DimensionError("total_loss needs at least one decoder layer");
  const std::size_t g = groundtruth.size();
  const double sx = 1.0 / extent.length_x(), sy = 1.0 / extent.length_y();

  // Groundtruth in normalized units, shared by every layer.
  std::vector<LaneSegment> gt_norm(groundtruth);
  for (LaneSegment& s : gt_norm) {
    for (Polyline* l : {&s.centerline, &s.left_boundary, &s.right_boundary}) {
      for (Vec2& pt : *l) pt = {pt.x * sx, pt.y * sy};
    }
  }
  const std::size_t p = layer_outputs.front().centerline.dim(1);
  Tensor gt_c, gt_l, gt_r;
  if (g > 0) {
    gt_c = gt_rows(groundtruth, &LaneSegment::centerline, p, extent);
    gt_l = gt_rows(groundtruth, &LaneSegment::left_boundary, p, extent);
    gt_r = gt_rows(groundtruth, &LaneSegment::right_boundary, p, extent);
  }
  const std::vector<Scalar> class_weights{static_cast<Scalar>(w.background), Scalar(1), Scalar(1)};

  LossResult res;
  std::vector<Tensor> layer_losses;
  for (const LaneOutputs& out : layer_outputs) {
    const std::size_t nq = out.logits.dim(0);
    const auto probs = class_probabilities(out.logits);
    MatchResult m;
    if (g > 0) {
      std::vector<double> cost(g * nq);
      for (std::size_t j = 0; j < nq; ++j) {
        LaneSegment pred;
        pred.centerline = polyline_at(out.centerline, j, sx, sy);
        pred.left_boundary = polyline_at(out.left, j, sx, sy);
        pred.right_boundary = polyline_at(out.right, j, sx, sy);
        for (std::size_t i = 0; i < g; ++i) cost[i * nq + j] = match_cost(pred, probs[j], gt_norm[i], w);
      }
      m = hungarian_match(cost, g, nq);
    }
    std::vector<int> targets(nq, kBackground);
    for (std::size_t i = 0; i < g; ++i) targets[m.assignment[i]] = groundtruth[i].class_id;

    const Tensor cls = ops::scale(tape, ops::cross_entropy(tape, out.logits, targets, class_weights),
                                  static_cast<Scalar>(w.cls));
    Tensor total = cls;
    double pts_v = 0, bnd_v = 0;
    if (g > 0) {
      const std::vector<Scalar> norm_row = [&] {
        std::vector<Scalar> v(g * p * 2);
        for (std::size_t i = 0; i < v.size(); i += 2) {
          v[i] = static_cast<Scalar>(sx);
          v[i + 1] = static_cast<Scalar>(sy);
        }
        return v;
      }();
      const Tensor norm = Tensor::from({g, p * 2}, norm_row);
      auto l1_sum = [&](const Tensor& pred, const Tensor& target) {
        const Tensor rows = ops::take_rows(tape, ops::reshape(tape, pred, {nq, p * 2}), m.assignment);
        return ops::sum(tape, ops::abs(tape, ops::sub(tape, ops::mul(tape, rows, norm), target)));
      };
      const double gp = static_cast<double>(g * p);
      const Tensor pts = ops::scale(tape, l1_sum(out.centerline, gt_c), static_cast<Scalar>(w.pts / gp));
      const Tensor bnd = ops::scale(tape, ops::add(tape, l1_sum(out.left, gt_l), l1_sum(out.right, gt_r)),
                                    static_cast<Scalar>(w.bnd / (2 * gp)));
      total = ops::add(tape, ops::add(tape, total, pts), bnd);
      pts_v = pts.item();
      bnd_v = bnd.item();
    }
    res.breakdown.cls += cls.item();
    res.breakdown.pts += pts_v;
    res.breakdown.bnd += bnd_v;
    layer_losses.push_back(total);
    res.matches.push_back(std::move(m));
  }
  const double layers = static_cast<double>(layer_outputs.size());
  Tensor sum = layer_losses.front();
  for (std::size_t i = 1; i < layer_losses.size(); ++i) sum = ops::add(tape, sum, layer_losses[i]);
  res.loss = ops::scale(tape, sum, static_cast<Scalar>(1.0 / layers));
  res.breakdown.cls /= layers;
  res.breakdown.pts /= layers;
  res.breakdown.bnd /= layers;
  res.breakdown.total = res.loss.item();
  return res;
}

}  // namespace lsn
