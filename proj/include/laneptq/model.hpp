#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "laneptq/checkpoint.hpp"
#include "laneptq/quant.hpp"
#include "laneptq/tensor.hpp"

namespace laneptq {

enum class HeadRole { semantic, confidence };

/// The two semantic heads, in the fixed order used for tie-breaking.
const std::vector<std::string>& semantic_head_ids();  // {"local_off", "root_off"}
inline const char* confidence_head_id() { return "conf"; }
HeadRole head_role(const std::string& head_id);

/// Per-image head outputs on the 16x16 grid. conf carries the sigmoid
/// output; conf_logits is kept alongside for the stable pretraining loss.
struct HeadOutput {
  Tensor conf;         // [1,16,16], in (0,1)
  Tensor conf_logits;  // [1,16,16]
  Tensor local_off;    // [2,16,16], channels (dx, dy) in cell units
  Tensor root_off;     // [2,16,16], channels (rx, ry) in cell units

  const Tensor& head(const std::string& head_id) const;
  void set_head(const std::string& head_id, Tensor t);
  HeadOutput detached() const;
};

/// Keypoint lane detector: 3-layer conv backbone (1->8 s1, 8->16 s2,
/// 16->16 s2) and three 3x3 conv heads over the 16x16 grid at stride 4.
struct LaneNet {
  static constexpr int kInput = 64;
  static constexpr int kGrid = 16;
  static constexpr int kStride = 4;

  Tensor conv1_w, conv1_b;  // [8,1,3,3]
  Tensor conv2_w, conv2_b;  // [16,8,3,3], stride 2
  Tensor conv3_w, conv3_b;  // [16,16,3,3], stride 2
  Tensor conf_w, conf_b;    // [1,16,3,3]
  Tensor local_w, local_b;  // [2,16,3,3]
  Tensor root_w, root_b;    // [2,16,3,3]

  static LaneNet init(uint64_t seed);
  static LaneNet from_checkpoint(const Checkpoint& ckpt);

  std::vector<Tensor> parameters();
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  /// Names of the tensors the quantizer touches.
  static std::vector<std::string> quantized_weight_names();
  static std::vector<std::string> quantized_activation_names();

  LaneNet clone() const;
  Checkpoint to_checkpoint(const QuantTable& qt = {}, uint64_t config_hash = 0,
                           uint64_t seed = 0) const;

  /// Full-precision forward when quant is null; otherwise every conv weight
  /// and every post-activation tensor named in the table goes through fake
  /// quantization (missing entries stay full precision).
  HeadOutput forward(Graph& g, const Tensor& image, const QuantTable* quant = nullptr) const;

  /// Forward that reports each activation tensor (pre-quantization) to the
  /// observer; this is how calibration collects its statistics.
  using ActivationObserver = std::function<void(const std::string&, const Tensor&)>;
  HeadOutput forward_observed(Graph& g, const Tensor& image, const QuantTable* quant,
                              const ActivationObserver& observer) const;
};

struct PretrainSample {
  Tensor image;      // [1,64,64]
  Tensor conf_mask;  // [1,16,16], 1 at occupied cells
  Tensor local_t;    // [2,16,16]
  Tensor root_t;     // [2,16,16]
};

struct PretrainConfig {
  int epochs = 30;
  double lr = 1e-3;
  int batch = 16;
  uint64_t seed = 1;
  int threads = 0;  // 0 = all available
};

struct PretrainStats {
  double final_epoch_loss = 0.0;
  int64_t steps = 0;
};

/// BCE on the confidence logits plus squared offset error summed over
/// gt-positive cells. Throws NumericError when the loss turns non-finite.
PretrainStats pretrain(LaneNet& net, const std::vector<PretrainSample>& data,
                       const PretrainConfig& cfg);

/// Per-image scalar loss under a worker-local clone of the net.
using BatchLossFn = std::function<Tensor(Graph&, const LaneNet&, int sample_index)>;

/// Evaluates `loss_fn` per index on a worker pool, backprops each graph, and
/// accumulates the per-image parameter gradients into `net` in index order
/// (deterministic for any thread count). Returns the mean loss.
double batch_gradients(LaneNet& net, const std::vector<int>& indices, int threads,
                       const BatchLossFn& loss_fn);

}  // namespace laneptq
