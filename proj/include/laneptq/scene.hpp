#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "laneptq/decode.hpp"
#include "laneptq/tensor.hpp"

namespace laneptq {

/// Geometry and rendering bounds for the synthetic scenes. Lanes are
/// bottom-anchored quadratics x(y) = x_root + b*(y - y_root) + c*(y - y_root)^2
/// rendered as 2 px anti-aliased strokes over gaussian background noise.
struct SceneParams {
  int min_lanes = 2;
  int max_lanes = 4;
  double noise_sigma = 0.05;
  double stroke_intensity = 0.9;
  double stroke_width = 2.0;
  int root_y_min = 58;
  int root_y_max = 63;
  int length_min = 22;  // rendered rows per lane
  int length_max = 30;
  double root_x_min = 6.0;
  double root_x_max = 58.0;
  double min_root_sep = 14.0;  // root x separation between lanes
  double min_lane_sep = 6.0;   // separation at every shared row
  double x_margin = 2.5;       // lanes stay inside [x_margin, 63 - x_margin]
  double slope_max = 0.7;
  double curvature_max = 0.015;
  int max_attempts = 200;

  void validate() const;
};

/// Grid-aligned training targets: occupancy plus local and root offsets in
/// cell units, laid out to round-trip exactly through decode().
struct GridTargets {
  Tensor conf_mask;  // [1,16,16]
  Tensor local_off;  // [2,16,16]
  Tensor root_off;   // [2,16,16]
  int collisions = 0;
};

struct SyntheticScene {
  Tensor image;                // [1,64,64] in [0,1]
  std::vector<Lane> gt_lanes;  // keypoints sampled every 4 rows, bottom to top
  GridTargets targets;
  uint64_t scene_seed = 0;
};

/// Deterministic generation: scene i depends only on (seed, i, params).
std::vector<SyntheticScene> generate(uint64_t seed, int count, const SceneParams& params);

/// Targets from ground-truth lanes. When two lanes claim one cell the point
/// nearer the cell center wins and the collision is counted.
GridTargets to_targets(const std::vector<Lane>& gt_lanes, int grid = 16, int stride = 4);

/// Ideal head outputs from targets (confidence 1 at occupied cells); decoding
/// these must reproduce the ground truth.
HeadOutput targets_to_heads(const GridTargets& targets);

struct Dataset {
  std::vector<SyntheticScene> scenes;
  std::vector<int> train_ids;
  std::vector<int> val_ids;
  std::vector<int> calib_ids;  // subset of train, images used without labels
  uint64_t master_seed = 0;
  SceneParams params;
};

/// Builds scenes plus deterministic train/val/calib splits.
Dataset build_dataset(uint64_t master_seed, int train_scenes, int val_scenes, int calib_images,
                      const SceneParams& params);

/// Raw little-endian float64 image files plus one JSON manifest carrying
/// lanes, grid targets, split assignment, seed and params.
void save_dataset(const std::string& dir, const Dataset& ds, uint64_t config_hash);
Dataset load_dataset(const std::string& dir);

}  // namespace laneptq
