#include "laneptq/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "laneptq/errors.hpp"
#include "laneptq/rng.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace laneptq {

namespace {

constexpr int kImg = 64;

struct LaneCurve {
  double x_root, b, c;
  int y_root, y_top;
  double x_at(double y) const {
    const double dy = y - static_cast<double>(y_root);
    return x_root + b * dy + c * dy * dy;
  }
};

bool curve_in_frame(const LaneCurve& l, const SceneParams& p) {
  for (int y = l.y_top; y <= l.y_root; ++y) {
    const double x = l.x_at(y);
    if (x < p.x_margin || x > (kImg - 1) - p.x_margin) return false;
  }
  return true;
}

bool curves_separated(const LaneCurve& a, const LaneCurve& b, const SceneParams& p) {
  if (std::abs(a.x_root - b.x_root) < p.min_root_sep) return false;
  const int lo = std::max(a.y_top, b.y_top);
  const int hi = std::min(a.y_root, b.y_root);
  for (int y = lo; y <= hi; ++y) {
    if (std::abs(a.x_at(y) - b.x_at(y)) < p.min_lane_sep) return false;
  }
  return true;
}

}  // namespace

void SceneParams::validate() const {
  if (min_lanes < 1 || max_lanes < min_lanes)
    throw std::invalid_argument("scene params: lane count range is empty");
  if (length_min < 8 || length_max < length_min)
    throw std::invalid_argument("scene params: lane length range is invalid");
  if (root_y_min > root_y_max || root_y_max > kImg - 1 || root_y_min - length_max < 0)
    throw std::invalid_argument("scene params: lane vertical extent leaves the frame");
  const double span = root_x_max - root_x_min;
  if (span < static_cast<double>(min_lanes - 1) * min_root_sep)
    throw std::invalid_argument("scene params: cannot place the minimum lane count at the "
                                "required root separation");
  if (stroke_width <= 0.0 || stroke_intensity <= 0.0 || noise_sigma < 0.0)
    throw std::invalid_argument("scene params: rendering values out of range");
}

std::vector<SyntheticScene> generate(uint64_t seed, int count, const SceneParams& params) {
  params.validate();
  std::vector<SyntheticScene> scenes;
  scenes.reserve(static_cast<size_t>(count));
  for (int idx = 0; idx < count; ++idx) {
    Rng rng = Rng::derive(seed, {static_cast<uint64_t>(idx)});

    std::vector<LaneCurve> curves;
    bool placed = false;
    for (int attempt = 0; attempt < params.max_attempts && !placed; ++attempt) {
      curves.clear();
      const int n = rng.uniform_int(params.min_lanes, params.max_lanes);
      bool ok = true;
      for (int k = 0; k < n && ok; ++k) {
        LaneCurve l;
        l.x_root = rng.uniform(params.root_x_min, params.root_x_max);
        l.y_root = rng.uniform_int(params.root_y_min, params.root_y_max);
        const int length = rng.uniform_int(params.length_min, params.length_max);
        l.y_top = l.y_root - length;
        l.b = rng.uniform(-params.slope_max, params.slope_max);
        l.c = rng.uniform(-params.curvature_max, params.curvature_max);
        if (!curve_in_frame(l, params)) {
          ok = false;
          break;
        }
        for (const LaneCurve& other : curves) {
          if (!curves_separated(l, other, params)) {
            ok = false;
            break;
          }
        }
        if (ok) curves.push_back(l);
      }
      placed = ok && static_cast<int>(curves.size()) >= params.min_lanes;
    }
    if (!placed)
      throw std::runtime_error("scene generation failed to place lanes for scene " +
                               std::to_string(idx));
    // canonical left-to-right order
    std::sort(curves.begin(), curves.end(),
              [](const LaneCurve& a, const LaneCurve& b) { return a.x_root < b.x_root; });

    SyntheticScene scene;
    scene.scene_seed = Rng::splitmix64(seed ^ static_cast<uint64_t>(idx));
    scene.image = Tensor::zeros({1, kImg, kImg});
    double* img = scene.image.data();

    const double hw = params.stroke_width * 0.5;
    for (const LaneCurve& l : curves) {
      for (int y = l.y_top; y <= l.y_root; ++y) {
        const double cx = l.x_at(y);
        const int px_lo = static_cast<int>(std::floor(cx - hw));
        const int px_hi = static_cast<int>(std::floor(cx + hw));
        for (int px = px_lo; px <= px_hi; ++px) {
          if (px < 0 || px >= kImg) continue;
          const double cover = std::max(
              0.0, std::min(static_cast<double>(px + 1), cx + hw) -
                       std::max(static_cast<double>(px), cx - hw));
          img[y * kImg + px] += params.stroke_intensity * cover;
        }
      }
      Lane lane;
      for (int y = l.y_root; y >= l.y_top; y -= 4) {
        lane.points.push_back({l.x_at(y), static_cast<double>(y)});
      }
      scene.gt_lanes.push_back(std::move(lane));
    }
    for (int i = 0; i < kImg * kImg; ++i) {
      img[i] = std::clamp(img[i] + rng.normal(0.0, params.noise_sigma), 0.0, 1.0);
    }
    scene.targets = to_targets(scene.gt_lanes);
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

GridTargets to_targets(const std::vector<Lane>& gt_lanes, int grid, int stride) {
  GridTargets t;
  t.conf_mask = Tensor::zeros({1, grid, grid});
  t.local_off = Tensor::zeros({2, grid, grid});
  t.root_off = Tensor::zeros({2, grid, grid});
  const int plane = grid * grid;
  const double s = static_cast<double>(stride);
  std::vector<double> best_dist(static_cast<size_t>(plane), -1.0);

  for (const Lane& lane : gt_lanes) {
    if (lane.points.empty()) continue;
    const Point2 start = lane.points.front();  // bottom-most point
    for (const Point2& p : lane.points) {
      const int col = static_cast<int>(std::floor(p.x / s));
      const int row = static_cast<int>(std::floor(p.y / s));
      if (col < 0 || col >= grid || row < 0 || row >= grid)
        throw std::invalid_argument("to_targets: lane point outside the grid");
      const int i = row * grid + col;
      const double ccx = (static_cast<double>(col) + 0.5) * s;
      const double ccy = (static_cast<double>(row) + 0.5) * s;
      const double d = std::hypot(p.x - ccx, p.y - ccy);
      if (best_dist[static_cast<size_t>(i)] >= 0.0) {
        ++t.collisions;
        if (d >= best_dist[static_cast<size_t>(i)]) continue;  // nearer point keeps the cell
      }
      best_dist[static_cast<size_t>(i)] = d;
      t.conf_mask.data()[i] = 1.0;
      t.local_off.data()[i] = p.x / s - static_cast<double>(col);
      t.local_off.data()[plane + i] = p.y / s - static_cast<double>(row);
      t.root_off.data()[i] = (start.x - p.x) / s;
      t.root_off.data()[plane + i] = (start.y - p.y) / s;
    }
  }
  return t;
}

HeadOutput targets_to_heads(const GridTargets& targets) {
  HeadOutput h;
  h.conf = targets.conf_mask.detached_copy();
  h.conf_logits = Tensor::zeros(targets.conf_mask.shape());
  for (int64_t i = 0; i < h.conf.size(); ++i)
    h.conf_logits.data()[i] = h.conf.data()[i] > 0.5 ? 8.0 : -8.0;
  h.local_off = targets.local_off.detached_copy();
  h.root_off = targets.root_off.detached_copy();
  return h;
}

Dataset build_dataset(uint64_t master_seed, int train_scenes, int val_scenes, int calib_images,
                      const SceneParams& params) {
  if (train_scenes <= 0 || val_scenes < 0)
    throw std::invalid_argument("build_dataset: bad scene counts");
  if (calib_images > train_scenes)
    throw std::invalid_argument("build_dataset: calibration set larger than the train split");
  Dataset ds;
  ds.master_seed = master_seed;
  ds.params = params;
  ds.scenes = generate(master_seed, train_scenes + val_scenes, params);
  for (int i = 0; i < train_scenes; ++i) ds.train_ids.push_back(i);
  for (int i = 0; i < val_scenes; ++i) ds.val_ids.push_back(train_scenes + i);
  std::vector<int> pool = ds.train_ids;
  Rng calib_rng = Rng::derive(master_seed, {0x63616c6962ULL});
  calib_rng.shuffle(pool);
  pool.resize(static_cast<size_t>(calib_images));
  std::sort(pool.begin(), pool.end());
  ds.calib_ids = std::move(pool);
  return ds;
}

namespace {

std::string image_filename(int id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%05d.f64", id);
  return buf;
}

ordered_json params_to_json(const SceneParams& p) {
  return ordered_json{{"min_lanes", p.min_lanes},
                      {"max_lanes", p.max_lanes},
                      {"noise_sigma", p.noise_sigma},
                      {"stroke_intensity", p.stroke_intensity},
                      {"stroke_width", p.stroke_width},
                      {"root_y_min", p.root_y_min},
                      {"root_y_max", p.root_y_max},
                      {"length_min", p.length_min},
                      {"length_max", p.length_max},
                      {"root_x_min", p.root_x_min},
                      {"root_x_max", p.root_x_max},
                      {"min_root_sep", p.min_root_sep},
                      {"min_lane_sep", p.min_lane_sep},
                      {"x_margin", p.x_margin},
                      {"slope_max", p.slope_max},
                      {"curvature_max", p.curvature_max},
                      {"max_attempts", p.max_attempts}};
}

SceneParams params_from_json(const ordered_json& j) {
  SceneParams p;
  p.min_lanes = j.at("min_lanes");
  p.max_lanes = j.at("max_lanes");
  p.noise_sigma = j.at("noise_sigma");
  p.stroke_intensity = j.at("stroke_intensity");
  p.stroke_width = j.at("stroke_width");
  p.root_y_min = j.at("root_y_min");
  p.root_y_max = j.at("root_y_max");
  p.length_min = j.at("length_min");
  p.length_max = j.at("length_max");
  p.root_x_min = j.at("root_x_min");
  p.root_x_max = j.at("root_x_max");
  p.min_root_sep = j.at("min_root_sep");
  p.min_lane_sep = j.at("min_lane_sep");
  p.x_margin = j.at("x_margin");
  p.slope_max = j.at("slope_max");
  p.curvature_max = j.at("curvature_max");
  p.max_attempts = j.at("max_attempts");
  return p;
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& ds, uint64_t config_hash) {
  fs::create_directories(fs::path(dir) / "images");
  ordered_json manifest;
  manifest["config_hash"] = config_hash;
  manifest["seed"] = ds.master_seed;
  manifest["params"] = params_to_json(ds.params);
  manifest["train_ids"] = ds.train_ids;
  manifest["val_ids"] = ds.val_ids;
  manifest["calib_ids"] = ds.calib_ids;
  ordered_json scenes = ordered_json::array();
  for (size_t i = 0; i < ds.scenes.size(); ++i) {
    const SyntheticScene& s = ds.scenes[i];
    ordered_json lanes = ordered_json::array();
    for (const Lane& lane : s.gt_lanes) {
      ordered_json pts = ordered_json::array();
      for (const Point2& p : lane.points) pts.push_back({p.x, p.y});
      lanes.push_back(pts);
    }
    scenes.push_back(ordered_json{{"id", static_cast<int>(i)},
                                  {"seed", s.scene_seed},
                                  {"collisions", s.targets.collisions},
                                  {"lanes", lanes}});
    const std::string img_path = (fs::path(dir) / "images" / image_filename(static_cast<int>(i))).string();
    std::ofstream os(img_path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("dataset: cannot write " + img_path);
    os.write(reinterpret_cast<const char*>(s.image.data()),
             static_cast<std::streamsize>(s.image.size() * sizeof(double)));
  }
  manifest["scenes"] = std::move(scenes);
  std::ofstream os(fs::path(dir) / "manifest.json", std::ios::trunc);
  if (!os) throw std::runtime_error("dataset: cannot write manifest in " + dir);
  os << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  const fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream is(manifest_path);
  if (!is) throw MissingArtifactError("missing dataset manifest: " + manifest_path.string());
  ordered_json manifest = ordered_json::parse(is);

  Dataset ds;
  ds.master_seed = manifest.at("seed");
  ds.params = params_from_json(manifest.at("params"));
  ds.train_ids = manifest.at("train_ids").get<std::vector<int>>();
  ds.val_ids = manifest.at("val_ids").get<std::vector<int>>();
  ds.calib_ids = manifest.at("calib_ids").get<std::vector<int>>();

  for (const auto& sj : manifest.at("scenes")) {
    SyntheticScene s;
    s.scene_seed = sj.at("seed");
    for (const auto& lj : sj.at("lanes")) {
      Lane lane;
      for (const auto& pj : lj) lane.points.push_back({pj.at(0), pj.at(1)});
      s.gt_lanes.push_back(std::move(lane));
    }
    const int id = sj.at("id");
    const std::string img_path = (fs::path(dir) / "images" / image_filename(id)).string();
    std::ifstream img(img_path, std::ios::binary);
    if (!img) throw MissingArtifactError("missing dataset image: " + img_path);
    s.image = Tensor::zeros({1, kImg, kImg});
    img.read(reinterpret_cast<char*>(s.image.data()),
             static_cast<std::streamsize>(s.image.size() * sizeof(double)));
    if (!img) throw std::runtime_error("dataset: truncated image " + img_path);
    s.targets = to_targets(s.gt_lanes);
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

}  // namespace laneptq
