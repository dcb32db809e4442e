#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "laneptq/decode.hpp"
#include "laneptq/metrics.hpp"
#include "laneptq/model.hpp"
#include "laneptq/rng.hpp"

namespace laneptq {

/// Piecewise-linear map from relative noise level to the expected lane
/// distortion score of one head. Node means average images x reruns
/// evaluations; the first node is always (0, 0).
struct NoiseScoreCurve {
  std::string head_id;
  std::vector<std::pair<double, double>> nodes;  // (sigma_rel, mean score), sigma increasing
  int reruns = 0;
  int images = 0;
};

struct SelectionConfig {
  int k = 1;
  int refresh_interval = 2000;
  std::vector<double> noise_levels = {0.0, 0.02, 0.05, 0.1, 0.2, 0.4, 0.8, 1.6};
  int reruns = 20;
  int curve_images = 100;
  uint64_t seed = 1;

  void validate() const;
};

/// Population standard deviation.
double tensor_std(const Tensor& t);

/// out = t + eps with eps ~ N(0, (sigma_rel * std(t))^2) iid per element;
/// sigma_rel = 0 returns the input values unchanged.
Tensor inject_noise(const Tensor& t, double sigma_rel, Rng& rng);

/// Monte-Carlo noise-score curve for one head (Prepare stage): cache the FP
/// heads once per image, then decode with the named head replaced by a
/// noised copy at every (level, rerun) and score against the FP lanes.
NoiseScoreCurve build_curve(const LaneNet& net, const std::vector<Tensor>& images,
                            const std::string& head_id, const SelectionConfig& cfg,
                            const DecodeConfig& dcfg, const DistortionConfig& scfg,
                            int threads = 0);

/// Curves for every head id in `head_ids`, sharing the per-image FP cache.
std::vector<NoiseScoreCurve> build_curves(const LaneNet& net, const std::vector<Tensor>& images,
                                          const std::vector<std::string>& head_ids,
                                          const SelectionConfig& cfg, const DecodeConfig& dcfg,
                                          const DistortionConfig& scfg, int threads = 0);

/// Piecewise-linear interpolation; clamps to 0 below the first node and to
/// the last node's mean above it.
double query_curve(const NoiseScoreCurve& curve, double sigma_rel);

/// Relative quantization noise of one head: rms(q - fp) / std(fp), averaged
/// over the batch. Dimensionally identical to the curve's sigma axis.
double head_noise_level(const std::vector<HeadOutput>& fp_heads,
                        const std::vector<HeadOutput>& quant_heads, const std::string& head_id);

/// Curve-query selection: rank semantic heads by the expected distortion at
/// their measured noise level; ties fall back to the fixed head order.
std::vector<std::string> select_heads(const std::vector<HeadOutput>& fp_heads,
                                      const std::vector<HeadOutput>& quant_heads,
                                      const std::vector<NoiseScoreCurve>& curves, int k);

/// Literal selection loop: per image, decode the FP lanes, then re-decode
/// with each semantic head replaced by its quantized counterpart and
/// accumulate the distortion score. Reference route for the curve shortcut.
std::vector<std::string> select_heads_direct(const std::vector<HeadOutput>& fp_heads,
                                             const std::vector<HeadOutput>& quant_heads, int k,
                                             const DecodeConfig& dcfg,
                                             const DistortionConfig& scfg);

/// Convenience overload running both forwards itself.
std::vector<std::string> select_heads_direct(const LaneNet& net, const QuantTable& quant,
                                             const std::vector<Tensor>& images, int k,
                                             const DecodeConfig& dcfg, const DistortionConfig& scfg);

/// Per-head accumulated scores of the direct loop, exposed for tests.
std::vector<std::pair<std::string, double>> direct_head_scores(
    const std::vector<HeadOutput>& fp_heads, const std::vector<HeadOutput>& quant_heads,
    const DecodeConfig& dcfg, const DistortionConfig& scfg);

std::string curves_to_json(const std::vector<NoiseScoreCurve>& curves, uint64_t config_hash,
                           uint64_t seed);
std::vector<NoiseScoreCurve> curves_from_json(const std::string& text);
void save_curves(const std::string& path, const std::vector<NoiseScoreCurve>& curves,
                 uint64_t config_hash, uint64_t seed);
std::vector<NoiseScoreCurve> load_curves(const std::string& path);

}  // namespace laneptq
