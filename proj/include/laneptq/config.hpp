#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "laneptq/decode.hpp"
#include "laneptq/errors.hpp"
#include "laneptq/metrics.hpp"
#include "laneptq/model.hpp"
#include "laneptq/ptq.hpp"
#include "laneptq/scene.hpp"
#include "laneptq/sensitivity.hpp"

namespace laneptq {

/// Whole-experiment configuration. Every key has a default, lives in one of
/// the sections [data] [model] [quant] [tune] [focus] [selection], and can be
/// set from a TOML-style file or a --section.key=value override. Unknown
/// keys are rejected.
struct ExperimentConfig {
  // [data]
  std::string data_dir = "data";
  std::string out_dir = "out";
  int64_t train_scenes = 2000;
  int64_t val_scenes = 300;
  int64_t calib_images = 512;
  int64_t master_seed = 7;
  int64_t min_lanes = 2;
  int64_t max_lanes = 4;
  double noise_sigma = 0.05;

  // [model]
  int64_t model_seed = 1;
  int64_t pretrain_epochs = 30;
  double pretrain_lr = 1e-3;
  int64_t pretrain_batch = 16;
  double threshold = 0.5;
  double cluster_radius = 8.0;
  double f1_iou = 0.5;
  double f1_width = 30.0;

  // [quant]
  std::string bits = "w8a8";
  int64_t grid_points = 100;
  double ema_momentum = 0.9;
  int64_t calib_batch = 32;

  // [tune]
  int64_t iterations = 5000;
  double lr = 0.000025;
  int64_t batch = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int64_t log_every = 100;
  int64_t tune_seed = 1;
  int64_t ablate_seeds = 3;
  int64_t threads = 0;  // 0 = all available (still capped by LANEPTQ_MAX_WORKERS)

  // [focus]
  double lambda = 2.0;
  std::string objective = "focus_select";

  // [selection]
  int64_t k = 1;
  int64_t refresh_interval = 2000;
  std::vector<double> noise_levels = {0.0, 0.02, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6};
  int64_t reruns = 20;
  int64_t curve_images = 100;
  int64_t probe_batch = 32;
  double score_v = 1.0;
  double score_pair_iou = 0.3;

  /// Parses the TOML-style file ([section], key = value, # comments; string,
  /// number, boolean and [numbers] values). Throws ConfigError.
  void apply_file(const std::string& path);
  /// Applies one "section.key=value" override.
  void apply_override(const std::string& dotted_key, const std::string& value);
  void validate() const;

  /// Canonical "section.key = value" serialization, one line per key, in
  /// registry order. The config hash is FNV-1a over this text.
  std::string canonical() const;
  uint64_t hash() const;
  /// One "--section.key=value (default ...)" line per key, for --help.
  static std::string describe_keys();

  // Materialized per-module configs.
  SceneParams scene_params() const;
  DecodeConfig decode_config() const;
  DistortionConfig distortion_config() const;
  SelectionConfig selection_config() const;
  PretrainConfig pretrain_config() const;
  CalibConfig calib_config() const;
  CalibConfig calib_config(const BitConfig& bc) const;
  TuneConfig tune_config() const;
  FocusConfig focus_config() const;
  BitConfig bit_config() const;
};

}  // namespace laneptq
