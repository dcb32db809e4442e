#include "laneptq/decode.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace laneptq {

namespace {

struct Keypoint {
  double conf;
  int row, col;
  Point2 pos;   // decoded pixel position
  Point2 root;  // predicted root position
};

}  // namespace

std::vector<Lane> decode(const HeadOutput& heads, const DecodeConfig& cfg) {
  const Tensor& conf = heads.conf;
  const Tensor& local = heads.local_off;
  const Tensor& root = heads.root_off;
  if (conf.shape().size() != 3 || local.shape().size() != 3 || root.shape().size() != 3 ||
      conf.shape()[0] != 1 || local.shape()[0] != 2 || root.shape()[0] != 2 ||
      conf.shape()[1] != local.shape()[1] || conf.shape()[2] != local.shape()[2] ||
      conf.shape()[1] != root.shape()[1] || conf.shape()[2] != root.shape()[2]) {
    throw std::invalid_argument("decode: heads must share a [*,R,C] grid with 1/2/2 channels");
  }
  const int rows = conf.shape()[1];
  const int cols = conf.shape()[2];
  const int plane = rows * cols;
  const double* cp = conf.data();
  const double* lp = local.data();
  const double* rp = root.data();
  const double s = static_cast<double>(cfg.stride);

  std::vector<Keypoint> kps;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int i = r * cols + c;
      if (cp[i] < cfg.threshold) continue;
      Keypoint k;
      k.conf = cp[i];
      k.row = r;
      k.col = c;
      k.pos.x = (static_cast<double>(c) + lp[i]) * s;
      k.pos.y = (static_cast<double>(r) + lp[plane + i]) * s;
      k.root.x = k.pos.x + rp[i] * s;
      k.root.y = k.pos.y + rp[plane + i] * s;
      kps.push_back(k);
    }
  }
  if (kps.empty()) return {};

  std::stable_sort(kps.begin(), kps.end(), [](const Keypoint& a, const Keypoint& b) {
    if (a.conf != b.conf) return a.conf > b.conf;
    if (a.row != b.row) return a.row < b.row;
    return a.col < b.col;
  });

  // Greedy clustering on predicted roots; centroids update as members join.
  struct Cluster {
    double sx = 0.0, sy = 0.0;
    std::vector<int> members;
  };
  std::vector<Cluster> clusters;
  for (size_t i = 0; i < kps.size(); ++i) {
    const Point2& r = kps[i].root;
    int best = -1;
    double best_d = cfg.cluster_radius;
    for (size_t c = 0; c < clusters.size(); ++c) {
      const double n = static_cast<double>(clusters[c].members.size());
      const double dx = clusters[c].sx / n - r.x;
      const double dy = clusters[c].sy / n - r.y;
      const double d = std::sqrt(dx * dx + dy * dy);
      if (d < best_d || (d == best_d && best == -1)) {
        best_d = d;
        best = static_cast<int>(c);
      }
    }
    if (best < 0) {
      clusters.push_back({r.x, r.y, {static_cast<int>(i)}});
    } else {
      clusters[static_cast<size_t>(best)].sx += r.x;
      clusters[static_cast<size_t>(best)].sy += r.y;
      clusters[static_cast<size_t>(best)].members.push_back(static_cast<int>(i));
    }
  }

  std::vector<Lane> lanes;
  for (const Cluster& cl : clusters) {
    // One point per grid row, keeping the highest confidence. Members are
    // already in descending confidence order, so first wins.
    std::vector<int> row_pick;
    std::vector<const Keypoint*> picked;
    for (int idx : cl.members) {
      const Keypoint& k = kps[static_cast<size_t>(idx)];
      bool taken = false;
      for (int pr : row_pick) {
        if (pr == k.row) {
          taken = true;
          break;
        }
      }
      if (!taken) {
        row_pick.push_back(k.row);
        picked.push_back(&k);
      }
    }
    if (picked.size() < 2) continue;
    std::stable_sort(picked.begin(), picked.end(),
                     [](const Keypoint* a, const Keypoint* b) { return a->pos.y > b->pos.y; });
    Lane lane;
    lane.points.reserve(picked.size());
    double last_y = std::numeric_limits<double>::infinity();
    for (const Keypoint* k : picked) {
      if (k->pos.y >= last_y) continue;  // enforce strictly decreasing y
      lane.points.push_back(k->pos);
      last_y = k->pos.y;
    }
    if (lane.points.size() >= 2) lanes.push_back(std::move(lane));
  }
  return lanes;
}

std::vector<Lane> decode_with_replaced_head(const HeadOutput& fp_heads, const std::string& head_id,
                                            const Tensor& replacement, const DecodeConfig& cfg) {
  HeadOutput heads = fp_heads;
  if (!replacement.same_shape(heads.head(head_id))) {
    throw std::invalid_argument("decode_with_replaced_head: replacement shape " +
                                shape_str(replacement.shape()) + " does not match head '" +
                                head_id + "'");
  }
  heads.set_head(head_id, replacement);
  return decode(heads, cfg);
}

}  // namespace laneptq
