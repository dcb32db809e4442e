#pragma once

#include <string>
#include <vector>

#include "laneptq/model.hpp"
#include "laneptq/tensor.hpp"

namespace laneptq {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Ordered polyline in image pixels, bottom to top (y strictly decreasing).
struct Lane {
  std::vector<Point2> points;
};

struct DecodeConfig {
  double threshold = 0.5;      // confidence cut
  int stride = 4;              // grid cell size in pixels
  double cluster_radius = 8.0; // px, on predicted root positions
};

/// Decodes head outputs into lanes:
///   keypoints  = ((col + dx) * stride, (row + dy) * stride) where conf >= threshold
///   pred root  = keypoint + root_off * stride
///   clustering = greedy over keypoints in descending confidence order
///                (ties: lower row, then lower col); a keypoint joins the
///                nearest cluster whose root centroid is within
///                cluster_radius, else starts a new cluster
///   lanes      = per cluster, at most one point per grid row (highest
///                confidence), sorted bottom to top; < 2 points dropped
std::vector<Lane> decode(const HeadOutput& heads, const DecodeConfig& cfg);

/// decode() with one head's tensor substituted; the rest stay as given.
std::vector<Lane> decode_with_replaced_head(const HeadOutput& fp_heads, const std::string& head_id,
                                            const Tensor& replacement, const DecodeConfig& cfg);

}  // namespace laneptq
