#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace laneptq {

/// Dense n-dimensional array of doubles with an attached gradient buffer.
/// Copies are shallow (shared storage); use detached_copy()/clone() to fork.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
  static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                            bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(d_); }
  const std::vector<int>& shape() const { return d_->shape; }
  int64_t size() const { return static_cast<int64_t>(d_->values.size()); }
  bool requires_grad() const { return d_->requires_grad; }

  double* data() { return d_->values.data(); }
  const double* data() const { return d_->values.data(); }
  std::vector<double>& values() { return d_->values; }
  const std::vector<double>& values() const { return d_->values; }

  // Gradient buffer; only allocated when requires_grad.
  double* grad() { return d_->grad.data(); }
  const double* grad() const { return d_->grad.data(); }
  std::vector<double>& grad_values() { return d_->grad; }

  double item() const;  // scalar tensors only
  void zero_grad();

  /// Deep copy with requires_grad = false (a fixed optimization target).
  Tensor detached_copy() const;
  /// Deep copy keeping requires_grad; used for per-worker parameter clones.
  Tensor clone() const;

  bool same_shape(const Tensor& other) const { return d_->shape == other.d_->shape; }
  bool same_storage(const Tensor& other) const { return d_ == other.d_; }

  /// Throws unless every value is finite.
  void check_finite(const std::string& what) const;

 private:
  struct Data {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // empty unless requires_grad
    bool requires_grad = false;
  };
  std::shared_ptr<Data> d_;
};

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

/// Reverse-mode tape. Ops append nodes in execution order; backward() walks
/// them in exact reverse, accumulating gradients additively across fan-out.
/// One graph per thread of work; graphs share no mutable state.
class Graph {
 public:
  /// track = false runs the same forward math without recording backward
  /// rules (evaluation / target-caching mode).
  explicit Graph(bool track = true) : track_(track) {}

  Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b);
  /// 3x3 convolution, pad 1, stride 1 or 2. x: [C,H,W], w: [O,C,3,3], b: [O].
  Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride);
  Tensor relu(const Tensor& x);
  Tensor sigmoid(const Tensor& x);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  /// Elementwise product. As the one sanctioned broadcast, a [1,H,W] lhs
  /// multiplies every channel of a [C,H,W] rhs (confidence masking).
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scalar_mul(const Tensor& x, double k);
  Tensor sum(const Tensor& x);          // -> scalar
  Tensor sum_squares(const Tensor& x);  // -> scalar, sum of x_i^2
  /// Numerically stable binary cross entropy from logits, mean over elements.
  Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

  /// Hook for ops defined outside the tensor core (the fake quantizer).
  /// fwd fills out[i] from in[i]; bwd_accum adds dL/din given (in, gout).
  Tensor unary_custom(const Tensor& x,
                      const std::function<void(const double*, double*, int64_t)>& fwd,
                      const std::function<void(const double*, const double*, double*, int64_t)>& bwd_accum);

  /// Seeds loss.grad with 1 and replays the tape in reverse. Grads are
  /// accumulated; callers zero parameter grads between steps.
  void backward(const Tensor& loss);

  size_t node_count() const { return nodes_.size(); }
  bool tracking() const { return track_; }

 private:
  bool track_;
  std::vector<std::function<void()>> nodes_;
  void record(std::function<void()> fn) {
    if (track_) nodes_.push_back(std::move(fn));
  }
  Tensor make_output(std::vector<int> shape, bool any_input_grad);
};

/// Adam with bias correction, applied in place to a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  /// One update from the parameters' current grad buffers.
  void step();
  void zero_grad();
  int64_t steps_taken() const { return t_; }
  double lr() const { return lr_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  int64_t t_ = 0;
  double lr_, beta1_, beta2_, eps_;
};

}  // namespace laneptq
