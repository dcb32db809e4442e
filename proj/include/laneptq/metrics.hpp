#pragma once

#include <utility>
#include <vector>

#include "laneptq/decode.hpp"

namespace laneptq {

struct DistortionConfig {
  double v = 1.0;              // penalty per mismatched point
  double pair_iou = 0.3;       // lane pairing IoU threshold
  double height_tol = 1.0;     // fixed 1 px matching rule
  double raster_width = 30.0;  // stroke width for lane IoU
};

/// Point matching outcome for one lane pair.
struct MatchResult {
  std::vector<std::pair<int, int>> matched;  // (index in a, index in b)
  int n_mismatch = 0;                        // unmatched points across both lanes
  double b = 0.0;  // vertical extent of the matched pairs' mean y values (>= 1 when nonempty)
};

struct PairResult {
  std::vector<std::pair<int, int>> pairs;  // (index in set_a, index in set_b)
  std::vector<int> unpaired_a;
  std::vector<int> unpaired_b;
};

/// Row-interval rasterization of a y-monotone lane: each integer row in the
/// lane's vertical span covers [x(row) - width/2, x(row) + width/2].
struct LaneMask {
  std::vector<std::pair<int, double>> rows;  // (row, center x)
  double half_width = 15.0;
};

LaneMask rasterize_lane(const Lane& lane, double width);
double lane_iou(const LaneMask& a, const LaneMask& b);

/// Greedy highest-IoU-first pairing; each lane lands in at most one pair.
PairResult pair_lanes(const std::vector<Lane>& set_a, const std::vector<Lane>& set_b,
                      const DistortionConfig& cfg);

/// Two-pointer sweep from the bottom; points match when their heights differ
/// by at most height_tol, each point used once.
MatchResult match_points(const Lane& lane_a, const Lane& lane_b, const DistortionConfig& cfg);

struct ScoreReport {
  double score = 0.0;
  int matched = 0;
  int mismatched = 0;
  int pairs = 0;
};

/// Lane distortion: sum over paired lanes of (matched drift / bounding
/// length) plus v per mismatched point; unpaired lanes contribute all of
/// their points to the mismatch count.
ScoreReport lane_distortion_report(const std::vector<Lane>& fp_lanes,
                                   const std::vector<Lane>& perturbed_lanes,
                                   const DistortionConfig& cfg);
double lane_distortion_score(const std::vector<Lane>& fp_lanes,
                             const std::vector<Lane>& perturbed_lanes,
                             const DistortionConfig& cfg);

struct F1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
};

/// IoU-based detection metric on the image canvas. With no predictions and
/// no ground truth the score is defined as a perfect 1.0.
F1Result f1_eval(const std::vector<Lane>& pred_lanes, const std::vector<Lane>& gt_lanes,
                 double iou_thresh = 0.5, double width = 30.0, int canvas_w = 64,
                 int canvas_h = 64);

/// Dataset-level F1 from summed per-image counts.
F1Result f1_from_counts(int tp, int fp, int fn);

}  // namespace laneptq
