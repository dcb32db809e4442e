#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "laneptq/metrics.hpp"
#include "laneptq/model.hpp"
#include "laneptq/quant.hpp"
#include "laneptq/scene.hpp"
#include "laneptq/sensitivity.hpp"

namespace laneptq {

struct FocusConfig {
  enum class Objective { plain, focus, focus_select };

  double lambda = 2.0;
  Objective objective = Objective::focus_select;

  void validate() const;  // lambda > 1 whenever the objective is not plain
  std::string objective_name() const;
  static Objective parse_objective(const std::string& name);
};

struct TuneConfig {
  int iterations = 5000;
  double lr = 0.000025;
  int batch = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int log_every = 100;
  int probe_batch = 32;  // images used for noise-level probes and selection
  uint64_t seed = 1;
  int threads = 0;

  void validate() const;
};

struct CalibConfig {
  BitConfig bits;
  int grid_points = 100;
  double ema_momentum = 0.9;
  int batch = 32;
  int threads = 0;
};

/// Net-wise reconstruction objective: sum over semantic heads of
/// ||S_q - S_fp||^2 plus the paired confidence term, per image.
Tensor loss_plain(Graph& g, const HeadOutput& fp, const HeadOutput& q);

/// Confidence-guided objective: per active semantic head,
/// ||C_fp (.) (S_q - S_fp)||^2 + lambda ||C_q - C_fp||^2, with the FP
/// confidence broadcast over the semantic channels and treated as a fixed
/// target. active == nullptr means every semantic head.
Tensor loss_focus(Graph& g, const HeadOutput& fp, const HeadOutput& q, double lambda,
                  const std::vector<std::string>* active_heads = nullptr);

struct Theorem1Report {
  double mc_estimate = 0.0;  // E ||M~ (.) (S_q - S_fp)||^2, M~ ~ Bernoulli(C)
  double analytic = 0.0;     // sum C (.) (S_q - S_fp)^2 (first-power weights)
  double rel_gap = 0.0;
};

/// Monte-Carlo check of the sampled-mask identity. Masks are drawn per
/// element per sample from Bernoulli(C_fp).
Theorem1Report verify_theorem1(const HeadOutput& fp, const HeadOutput& q, int samples,
                               uint64_t seed);

struct MaskInequalityReport {
  double masked = 0.0;    // sum_i ||1{C>=0.5} (.) dS_i||^2
  double weighted = 0.0;  // sum_i ||C (.) dS_i||^2
  bool holds = false;
};

MaskInequalityReport theorem1_mask_inequality(const HeadOutput& fp, const HeadOutput& q);

/// Fraction of calibration batches on which the deterministic-mask
/// inequality holds for the given quantized net (reported, not asserted).
double theorem1_holds_fraction(const LaneNet& net, const QuantTable& quant,
                               const std::vector<Tensor>& images, int batch, int threads = 0);

/// OMSE weight scales plus EMA-folded activation scales observed with the
/// weights already fake-quantized. Every returned spec is frozen.
QuantTable calibrate(const LaneNet& net, const std::vector<Tensor>& calib_images,
                     const CalibConfig& cfg);

struct TuneLogRow {
  int iteration = 0;
  double loss = 0.0;
  double sigma_local = 0.0;
  double sigma_root = 0.0;
  std::string active;  // "+"-joined active semantic heads
};

struct TuneResult {
  std::vector<TuneLogRow> log;
  std::vector<std::string> final_active;
  double final_loss = 0.0;
};

/// Adam reconstruction of the cached FP head outputs through fake-quantized
/// forwards. Scales stay frozen; with objective = focus_select the active
/// head set is recomputed every refresh_interval iterations from the curves.
TuneResult tune(LaneNet& net, const QuantTable& quant, const std::vector<Tensor>& calib_images,
                const TuneConfig& tcfg, const FocusConfig& fcfg,
                const std::vector<NoiseScoreCurve>& curves, const SelectionConfig& sel,
                const DecodeConfig& dcfg, const DistortionConfig& scfg);

/// Dataset-level F1 over the given scene ids (counts summed across images).
F1Result evaluate_f1(const LaneNet& net, const Dataset& ds, const std::vector<int>& ids,
                     const QuantTable* quant, const DecodeConfig& dcfg, double f1_iou,
                     double f1_width, int threads = 0);

}  // namespace laneptq
