#pragma once

#include <map>
#include <string>

#include "laneptq/tensor.hpp"

namespace laneptq {

/// Per-tensor symmetric uniform quantizer state. Zero-point is always 0;
/// integer levels live in [-2^(bits-1), 2^(bits-1)-1].
struct QuantSpec {
  enum class Target { weight, activation };

  int bits = 8;         // 4 or 8
  double scale = 1.0;   // > 0
  bool frozen = false;  // frozen scales never change during tuning
  Target target = Target::weight;

  int qmin() const { return -(1 << (bits - 1)); }
  int qmax() const { return (1 << (bits - 1)) - 1; }

  void validate() const;
};

/// Weight/activation bit pair; the supported points are W8A8, W8A4, W4A4.
struct BitConfig {
  int weight_bits = 8;
  int activation_bits = 8;

  void validate() const;
  std::string name() const;                     // "w8a8"
  static BitConfig parse(const std::string&);   // accepts "w8a8" / "W8A4" ...
};

/// Quantizer table keyed by tensor name ("conv1.w", "act.relu2", ...).
/// Ordered so that iteration, serialization and comparison are deterministic.
using QuantTable = std::map<std::string, QuantSpec>;

/// scale-round-clamp-rescale on plain values. Rejects non-finite input.
Tensor fake_quantize(const Tensor& x, const QuantSpec& spec);

/// Graph-recorded fake quantization with the straight-through backward rule:
/// gradient 1 where the pre-round value x/scale lies strictly inside
/// (qmin, qmax), else 0.
Tensor fake_quantize(Graph& g, const Tensor& x, const QuantSpec& spec);

/// The STE pass-through mask itself, exposed so tests can assert the rule.
void ste_mask(const Tensor& x, const QuantSpec& spec, std::vector<double>& mask_out);

struct OmseResult {
  double scale = 0.0;
  bool degenerate = false;  // all-zero input; scale set to the epsilon floor
};

/// MSE-minimizing scale over a 100-point grid spanning
/// [0.2, 1.2] * max|w| / qmax. Grid search keeps the procedure auditable.
OmseResult calibrate_weight_omse(const Tensor& w, int bits, int grid_points = 100);

/// Same grid MSE search applied to an activation batch; callers fold the
/// result through the EMA below.
OmseResult calibrate_activation_batch(const Tensor& acts, int bits, int grid_points = 100);

/// new = momentum * running + (1 - momentum) * batch_best.
/// The first update initializes running = batch_best.
class EmaScale {
 public:
  void update(double batch_best, double momentum);
  bool initialized() const { return initialized_; }
  double value() const { return value_; }

 private:
  bool initialized_ = false;
  double value_ = 0.0;
};

}  // namespace laneptq
