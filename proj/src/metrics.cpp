#include "laneptq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace laneptq {

namespace {

// Linear interpolation of the polyline's x at height y. Lanes are ordered
// bottom to top with strictly decreasing y.
double lane_x_at(const Lane& lane, double y) {
  const auto& pts = lane.points;
  if (y >= pts.front().y) return pts.front().x;
  if (y <= pts.back().y) return pts.back().x;
  for (size_t i = 1; i < pts.size(); ++i) {
    if (y >= pts[i].y) {
      const double y0 = pts[i - 1].y, y1 = pts[i].y;
      const double t = (y - y0) / (y1 - y0);
      return pts[i - 1].x + t * (pts[i].x - pts[i - 1].x);
    }
  }
  return pts.back().x;
}

}  // namespace

LaneMask rasterize_lane(const Lane& lane, double width) {
  if (lane.points.size() < 2) throw std::invalid_argument("rasterize_lane: need >= 2 points");
  LaneMask mask;
  mask.half_width = width * 0.5;
  const double y_top = lane.points.back().y;
  const double y_bot = lane.points.front().y;
  int r0 = static_cast<int>(std::ceil(y_top));
  int r1 = static_cast<int>(std::floor(y_bot));
  if (r0 > r1) {  // span shorter than one row; keep a single-row mask
    r0 = r1 = static_cast<int>(std::lround(0.5 * (y_top + y_bot)));
  }
  mask.rows.reserve(static_cast<size_t>(r1 - r0 + 1));
  for (int r = r0; r <= r1; ++r) {
    mask.rows.emplace_back(r, lane_x_at(lane, static_cast<double>(r)));
  }
  return mask;
}

double lane_iou(const LaneMask& a, const LaneMask& b) {
  const double wa = 2.0 * a.half_width;
  const double wb = 2.0 * b.half_width;
  double inter = 0.0;
  size_t ia = 0, ib = 0;
  while (ia < a.rows.size() && ib < b.rows.size()) {
    if (a.rows[ia].first < b.rows[ib].first) {
      ++ia;
    } else if (a.rows[ia].first > b.rows[ib].first) {
      ++ib;
    } else {
      const double lo = std::max(a.rows[ia].second - a.half_width, b.rows[ib].second - b.half_width);
      const double hi = std::min(a.rows[ia].second + a.half_width, b.rows[ib].second + b.half_width);
      if (hi > lo) inter += hi - lo;
      ++ia;
      ++ib;
    }
  }
  const double uni = wa * static_cast<double>(a.rows.size()) +
                     wb * static_cast<double>(b.rows.size()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

PairResult pair_lanes(const std::vector<Lane>& set_a, const std::vector<Lane>& set_b,
                      const DistortionConfig& cfg) {
  const size_t na = set_a.size(), nb = set_b.size();
  std::vector<LaneMask> ma, mb;
  ma.reserve(na);
  mb.reserve(nb);
  for (const auto& l : set_a) ma.push_back(rasterize_lane(l, cfg.raster_width));
  for (const auto& l : set_b) mb.push_back(rasterize_lane(l, cfg.raster_width));

  std::vector<std::vector<double>> iou(na, std::vector<double>(nb, 0.0));
  for (size_t i = 0; i < na; ++i)
    for (size_t j = 0; j < nb; ++j) iou[i][j] = lane_iou(ma[i], mb[j]);

  PairResult result;
  std::vector<bool> used_a(na, false), used_b(nb, false);
  for (;;) {
    double best = cfg.pair_iou;
    int bi = -1, bj = -1;
    for (size_t i = 0; i < na; ++i) {
      if (used_a[i]) continue;
      for (size_t j = 0; j < nb; ++j) {
        if (used_b[j]) continue;
        if (iou[i][j] > best || (iou[i][j] == best && bi == -1 && iou[i][j] >= cfg.pair_iou)) {
          best = iou[i][j];
          bi = static_cast<int>(i);
          bj = static_cast<int>(j);
        }
      }
    }
    if (bi < 0) break;
    used_a[static_cast<size_t>(bi)] = true;
    used_b[static_cast<size_t>(bj)] = true;
    result.pairs.emplace_back(bi, bj);
  }
  for (size_t i = 0; i < na; ++i)
    if (!used_a[i]) result.unpaired_a.push_back(static_cast<int>(i));
  for (size_t j = 0; j < nb; ++j)
    if (!used_b[j]) result.unpaired_b.push_back(static_cast<int>(j));
  return result;
}

MatchResult match_points(const Lane& lane_a, const Lane& lane_b, const DistortionConfig& cfg) {
  MatchResult res;
  const auto& pa = lane_a.points;
  const auto& pb = lane_b.points;
  size_t i = 0, j = 0;
  while (i < pa.size() && j < pb.size()) {
    const double dy = pa[i].y - pb[j].y;
    if (std::abs(dy) <= cfg.height_tol) {
      res.matched.emplace_back(static_cast<int>(i), static_cast<int>(j));
      ++i;
      ++j;
    } else if (dy > 0.0) {
      ++i;  // a's point sits lower; nothing later in b can reach it
    } else {
      ++j;
    }
  }
  res.n_mismatch = static_cast<int>(pa.size() + pb.size() - 2 * res.matched.size());
  if (!res.matched.empty()) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& [ai, bi] : res.matched) {
      const double ym = 0.5 * (pa[static_cast<size_t>(ai)].y + pb[static_cast<size_t>(bi)].y);
      lo = std::min(lo, ym);
      hi = std::max(hi, ym);
    }
    res.b = std::max(hi - lo, 1.0);  // floor keeps single-row matches finite
  }
  return res;
}

ScoreReport lane_distortion_report(const std::vector<Lane>& fp_lanes,
                                   const std::vector<Lane>& perturbed_lanes,
                                   const DistortionConfig& cfg) {
  ScoreReport rep;
  if (fp_lanes.empty() && perturbed_lanes.empty()) return rep;

  PairResult pairing = pair_lanes(fp_lanes, perturbed_lanes, cfg);
  rep.pairs = static_cast<int>(pairing.pairs.size());
  double drift = 0.0;
  int mismatched = 0;
  for (const auto& [ia, ib] : pairing.pairs) {
    const Lane& a = fp_lanes[static_cast<size_t>(ia)];
    const Lane& b = perturbed_lanes[static_cast<size_t>(ib)];
    MatchResult m = match_points(a, b, cfg);
    if (m.matched.empty()) {
      // match failure inside a pair: every point counts as mismatched
      mismatched += static_cast<int>(a.points.size() + b.points.size());
      continue;
    }
    for (const auto& [ai, bi] : m.matched) {
      const Point2& p0 = a.points[static_cast<size_t>(ai)];
      const Point2& p1 = b.points[static_cast<size_t>(bi)];
      drift += std::hypot(p0.x - p1.x, p0.y - p1.y) / m.b;
    }
    mismatched += m.n_mismatch;
    rep.matched += static_cast<int>(m.matched.size());
  }
  for (int ia : pairing.unpaired_a) mismatched += static_cast<int>(fp_lanes[static_cast<size_t>(ia)].points.size());
  for (int ib : pairing.unpaired_b)
    mismatched += static_cast<int>(perturbed_lanes[static_cast<size_t>(ib)].points.size());

  rep.mismatched = mismatched;
  rep.score = drift + static_cast<double>(mismatched) * cfg.v;
  return rep;
}

double lane_distortion_score(const std::vector<Lane>& fp_lanes,
                             const std::vector<Lane>& perturbed_lanes,
                             const DistortionConfig& cfg) {
  return lane_distortion_report(fp_lanes, perturbed_lanes, cfg).score;
}

namespace {

LaneMask rasterize_clipped(const Lane& lane, double width, int canvas_w, int canvas_h) {
  LaneMask m = rasterize_lane(lane, width);
  std::vector<std::pair<int, double>> kept;
  kept.reserve(m.rows.size());
  for (auto& [row, cx] : m.rows) {
    if (row >= 0 && row < canvas_h) kept.emplace_back(row, cx);
  }
  m.rows = std::move(kept);
  (void)canvas_w;  // horizontal clipping is immaterial for relative IoU here
  return m;
}

}  // namespace

F1Result f1_eval(const std::vector<Lane>& pred_lanes, const std::vector<Lane>& gt_lanes,
                 double iou_thresh, double width, int canvas_w, int canvas_h) {
  F1Result r;
  if (pred_lanes.empty() && gt_lanes.empty()) {
    r.precision = r.recall = r.f1 = 1.0;
    return r;
  }
  std::vector<LaneMask> mp, mg;
  mp.reserve(pred_lanes.size());
  mg.reserve(gt_lanes.size());
  for (const auto& l : pred_lanes) mp.push_back(rasterize_clipped(l, width, canvas_w, canvas_h));
  for (const auto& l : gt_lanes) mg.push_back(rasterize_clipped(l, width, canvas_w, canvas_h));

  std::vector<std::vector<double>> iou(mp.size(), std::vector<double>(mg.size(), 0.0));
  for (size_t i = 0; i < mp.size(); ++i)
    for (size_t j = 0; j < mg.size(); ++j) iou[i][j] = lane_iou(mp[i], mg[j]);

  std::vector<bool> used_p(mp.size(), false), used_g(mg.size(), false);
  int tp = 0;
  for (;;) {
    double best = iou_thresh;
    int bi = -1, bj = -1;
    for (size_t i = 0; i < mp.size(); ++i) {
      if (used_p[i]) continue;
      for (size_t j = 0; j < mg.size(); ++j) {
        if (used_g[j]) continue;
        const double v = iou[i][j];
        if (v > best || (v == best && bi == -1 && v >= iou_thresh)) {
          best = v;
          bi = static_cast<int>(i);
          bj = static_cast<int>(j);
        }
      }
    }
    if (bi < 0) break;
    used_p[static_cast<size_t>(bi)] = true;
    used_g[static_cast<size_t>(bj)] = true;
    ++tp;
  }
  return f1_from_counts(tp, static_cast<int>(mp.size()) - tp, static_cast<int>(mg.size()) - tp);
}

F1Result f1_from_counts(int tp, int fp, int fn) {
  F1Result r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  if (tp == 0 && fp == 0 && fn == 0) {
    r.precision = r.recall = r.f1 = 1.0;
    return r;
  }
  r.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
  r.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
  r.f1 = static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
  return r;
}

}  // namespace laneptq
