#include "laneptq/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace laneptq {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int e : shape) {
    if (e <= 0) throw std::invalid_argument("tensor extent must be positive, got " + std::to_string(e));
    n *= e;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  Tensor t;
  t.d_ = std::make_shared<Data>();
  int64_t n = shape_numel(shape);
  t.d_->shape = std::move(shape);
  t.d_->values.assign(static_cast<size_t>(n), 0.0);
  t.d_->requires_grad = requires_grad;
  if (requires_grad) t.d_->grad.assign(static_cast<size_t>(n), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.d_->values) v = value;
  return t;
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
  int64_t n = shape_numel(shape);
  if (n != static_cast<int64_t>(values.size())) {
    throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.d_ = std::make_shared<Data>();
  t.d_->shape = std::move(shape);
  t.d_->values = std::move(values);
  t.d_->requires_grad = requires_grad;
  if (requires_grad) t.d_->grad.assign(static_cast<size_t>(n), 0.0);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor " + shape_str(shape()));
  return d_->values[0];
}

void Tensor::zero_grad() {
  for (auto& g : d_->grad) g = 0.0;
}

Tensor Tensor::detached_copy() const {
  return from_values(d_->shape, d_->values, false);
}

Tensor Tensor::clone() const {
  return from_values(d_->shape, d_->values, d_->requires_grad);
}

void Tensor::check_finite(const std::string& what) const {
  for (double v : d_->values) {
    if (!std::isfinite(v)) throw std::runtime_error("non-finite value in " + what);
  }
}

Tensor Graph::make_output(std::vector<int> shape, bool any_input_grad) {
  return Tensor::zeros(std::move(shape), track_ && any_input_grad);
}

// ---------------------------------------------------------------------------
// dense

Tensor Graph::dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.shape().size() != 1 || w.shape().size() != 2 || b.shape().size() != 1 ||
      w.shape()[1] != x.shape()[0] || w.shape()[0] != b.shape()[0]) {
    throw std::invalid_argument("dense: incompatible shapes x=" + shape_str(x.shape()) +
                                " w=" + shape_str(w.shape()) + " b=" + shape_str(b.shape()));
  }
  const int m = w.shape()[0], n = w.shape()[1];
  Tensor out = make_output({m}, x.requires_grad() || w.requires_grad() || b.requires_grad());
  const double* xp = x.data();
  const double* wp = w.data();
  const double* bp = b.data();
  double* op = out.data();
  for (int i = 0; i < m; ++i) {
    double acc = bp[i];
    const double* wrow = wp + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) acc += wrow[j] * xp[j];
    op[i] = acc;
  }
  if (out.requires_grad()) {
    record([x, w, b, out, m, n]() mutable {
      const double* g = out.grad();
      if (x.requires_grad()) {
        double* gx = x.grad();
        const double* wp = w.data();
        for (int i = 0; i < m; ++i) {
          const double* wrow = wp + static_cast<int64_t>(i) * n;
          for (int j = 0; j < n; ++j) gx[j] += wrow[j] * g[i];
        }
      }
      if (w.requires_grad()) {
        double* gw = w.grad();
        const double* xp = x.data();
        for (int i = 0; i < m; ++i) {
          double* grow = gw + static_cast<int64_t>(i) * n;
          for (int j = 0; j < n; ++j) grow[j] += g[i] * xp[j];
        }
      }
      if (b.requires_grad()) {
        double* gb = b.grad();
        for (int i = 0; i < m; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d, 3x3, pad 1

namespace {

// Output index range [lo, hi] such that 0 <= o*stride + k - 1 < in_extent.
inline void tap_range(int k, int stride, int in_extent, int out_extent, int& lo, int& hi) {
  int off = k - 1;
  lo = 0;
  if (off < 0) lo = (-off + stride - 1) / stride;
  hi = (in_extent - 1 - off) / stride;
  if (hi > out_extent - 1) hi = out_extent - 1;
}

}  // namespace

Tensor Graph::conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  if (stride != 1 && stride != 2) throw std::invalid_argument("conv2d: stride must be 1 or 2");
  if (x.shape().size() != 3 || w.shape().size() != 4 || b.shape().size() != 1) {
    throw std::invalid_argument("conv2d: rank mismatch x=" + shape_str(x.shape()) +
                                " w=" + shape_str(w.shape()));
  }
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int O = w.shape()[0];
  if (w.shape()[1] != C || w.shape()[2] != 3 || w.shape()[3] != 3 || b.shape()[0] != O) {
    throw std::invalid_argument("conv2d: incompatible shapes x=" + shape_str(x.shape()) +
                                " w=" + shape_str(w.shape()) + " b=" + shape_str(b.shape()));
  }
  const int Ho = (H - 1) / stride + 1;
  const int Wo = (W - 1) / stride + 1;
  Tensor out = make_output({O, Ho, Wo}, x.requires_grad() || w.requires_grad() || b.requires_grad());

  const double* xp = x.data();
  const double* wp = w.data();
  const double* bp = b.data();
  double* op = out.data();
  for (int o = 0; o < O; ++o) {
    double* oplane = op + static_cast<int64_t>(o) * Ho * Wo;
    for (int i = 0; i < Ho * Wo; ++i) oplane[i] = bp[o];
    for (int ci = 0; ci < C; ++ci) {
      const double* xplane = xp + static_cast<int64_t>(ci) * H * W;
      const double* wk = wp + (static_cast<int64_t>(o) * C + ci) * 9;
      for (int ky = 0; ky < 3; ++ky) {
        int ylo, yhi;
        tap_range(ky, stride, H, Ho, ylo, yhi);
        for (int kx = 0; kx < 3; ++kx) {
          int xlo, xhi;
          tap_range(kx, stride, W, Wo, xlo, xhi);
          const double wv = wk[ky * 3 + kx];
          for (int oy = ylo; oy <= yhi; ++oy) {
            const double* xrow = xplane + static_cast<int64_t>(oy * stride + ky - 1) * W + (kx - 1);
            double* orow = oplane + static_cast<int64_t>(oy) * Wo;
            if (stride == 1) {
              for (int ox = xlo; ox <= xhi; ++ox) orow[ox] += wv * xrow[ox];
            } else {
              for (int ox = xlo; ox <= xhi; ++ox) orow[ox] += wv * xrow[2 * ox];
            }
          }
        }
      }
    }
  }

  if (out.requires_grad()) {
    record([x, w, b, out, stride, C, H, W, O, Ho, Wo]() mutable {
      const double* g = out.grad();
      const double* wp = w.data();
      const double* xp = x.data();
      if (x.requires_grad()) {
        double* gx = x.grad();
        for (int o = 0; o < O; ++o) {
          const double* gplane = g + static_cast<int64_t>(o) * Ho * Wo;
          for (int ci = 0; ci < C; ++ci) {
            double* gxplane = gx + static_cast<int64_t>(ci) * H * W;
            const double* wk = wp + (static_cast<int64_t>(o) * C + ci) * 9;
            for (int ky = 0; ky < 3; ++ky) {
              int ylo, yhi;
              tap_range(ky, stride, H, Ho, ylo, yhi);
              for (int kx = 0; kx < 3; ++kx) {
                int xlo, xhi;
                tap_range(kx, stride, W, Wo, xlo, xhi);
                const double wv = wk[ky * 3 + kx];
                for (int oy = ylo; oy <= yhi; ++oy) {
                  const double* grow = gplane + static_cast<int64_t>(oy) * Wo;
                  double* gxrow = gxplane + static_cast<int64_t>(oy * stride + ky - 1) * W + (kx - 1);
                  if (stride == 1) {
                    for (int ox = xlo; ox <= xhi; ++ox) gxrow[ox] += wv * grow[ox];
                  } else {
                    for (int ox = xlo; ox <= xhi; ++ox) gxrow[2 * ox] += wv * grow[ox];
                  }
                }
              }
            }
          }
        }
      }
      if (w.requires_grad()) {
        double* gw = w.grad();
        for (int o = 0; o < O; ++o) {
          const double* gplane = g + static_cast<int64_t>(o) * Ho * Wo;
          for (int ci = 0; ci < C; ++ci) {
            const double* xplane = xp + static_cast<int64_t>(ci) * H * W;
            double* gwk = gw + (static_cast<int64_t>(o) * C + ci) * 9;
            for (int ky = 0; ky < 3; ++ky) {
              int ylo, yhi;
              tap_range(ky, stride, H, Ho, ylo, yhi);
              for (int kx = 0; kx < 3; ++kx) {
                int xlo, xhi;
                tap_range(kx, stride, W, Wo, xlo, xhi);
                double acc = 0.0;
                for (int oy = ylo; oy <= yhi; ++oy) {
                  const double* grow = gplane + static_cast<int64_t>(oy) * Wo;
                  const double* xrow =
                      xplane + static_cast<int64_t>(oy * stride + ky - 1) * W + (kx - 1);
                  if (stride == 1) {
                    for (int ox = xlo; ox <= xhi; ++ox) acc += grow[ox] * xrow[ox];
                  } else {
                    for (int ox = xlo; ox <= xhi; ++ox) acc += grow[ox] * xrow[2 * ox];
                  }
                }
                gwk[ky * 3 + kx] += acc;
              }
            }
          }
        }
      }
      if (b.requires_grad()) {
        double* gb = b.grad();
        for (int o = 0; o < O; ++o) {
          const double* gplane = g + static_cast<int64_t>(o) * Ho * Wo;
          double acc = 0.0;
          for (int i = 0; i < Ho * Wo; ++i) acc += gplane[i];
          gb[o] += acc;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise and reductions

Tensor Graph::relu(const Tensor& x) {
  Tensor out = make_output(x.shape(), x.requires_grad());
  const double* xp = x.data();
  double* op = out.data();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) op[i] = xp[i] > 0.0 ? xp[i] : 0.0;
  if (out.requires_grad()) {
    record([x, out, n]() mutable {
      const double* g = out.grad();
      const double* xp = x.data();
      double* gx = x.grad();
      // subgradient 0 at exactly 0
      for (int64_t i = 0; i < n; ++i) gx[i] += xp[i] > 0.0 ? g[i] : 0.0;
    });
  }
  return out;
}

Tensor Graph::sigmoid(const Tensor& x) {
  Tensor out = make_output(x.shape(), x.requires_grad());
  const double* xp = x.data();
  double* op = out.data();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) op[i] = 1.0 / (1.0 + std::exp(-xp[i]));
  if (out.requires_grad()) {
    record([x, out, n]() mutable {
      const double* g = out.grad();
      const double* op = out.data();
      double* gx = x.grad();
      for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * op[i] * (1.0 - op[i]);
    });
  }
  return out;
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
  const int64_t n = a.size();
  const double* ap = a.data();
  const double* bp = b.data();
  double* op = out.data();
  for (int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
  if (out.requires_grad()) {
    record([a, b, out, n]() mutable {
      const double* g = out.grad();
      if (a.requires_grad()) {
        double* ga = a.grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        double* gb = b.grad();
        for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor Graph::sub(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument("sub: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  Tensor out = make_output(a.shape(), a.requires_grad() || b.requires_grad());
  const int64_t n = a.size();
  const double* ap = a.data();
  const double* bp = b.data();
  double* op = out.data();
  for (int64_t i = 0; i < n; ++i) op[i] = ap[i] - bp[i];
  if (out.requires_grad()) {
    record([a, b, out, n]() mutable {
      const double* g = out.grad();
      if (a.requires_grad()) {
        double* ga = a.grad();
        for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        double* gb = b.grad();
        for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  const bool bcast = a.shape().size() == 3 && b.shape().size() == 3 && a.shape()[0] == 1 &&
                     b.shape()[0] > 1 && a.shape()[1] == b.shape()[1] && a.shape()[2] == b.shape()[2];
  if (!bcast && !a.same_shape(b)) {
    throw std::invalid_argument("mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  }
  Tensor out = make_output(b.shape(), a.requires_grad() || b.requires_grad());
  const int64_t plane = bcast ? a.size() : 0;
  const int64_t n = b.size();
  const double* ap = a.data();
  const double* bp = b.data();
  double* op = out.data();
  if (bcast) {
    const int ch = b.shape()[0];
    for (int c = 0; c < ch; ++c)
      for (int64_t i = 0; i < plane; ++i) op[c * plane + i] = ap[i] * bp[c * plane + i];
  } else {
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
  }
  if (out.requires_grad()) {
    record([a, b, out, bcast, plane, n]() mutable {
      const double* g = out.grad();
      const double* ap = a.data();
      const double* bp = b.data();
      if (bcast) {
        const int ch = b.shape()[0];
        if (a.requires_grad()) {
          double* ga = a.grad();
          for (int c = 0; c < ch; ++c)
            for (int64_t i = 0; i < plane; ++i) ga[i] += bp[c * plane + i] * g[c * plane + i];
        }
        if (b.requires_grad()) {
          double* gb = b.grad();
          for (int c = 0; c < ch; ++c)
            for (int64_t i = 0; i < plane; ++i) gb[c * plane + i] += ap[i] * g[c * plane + i];
        }
      } else {
        if (a.requires_grad()) {
          double* ga = a.grad();
          for (int64_t i = 0; i < n; ++i) ga[i] += bp[i] * g[i];
        }
        if (b.requires_grad()) {
          double* gb = b.grad();
          for (int64_t i = 0; i < n; ++i) gb[i] += ap[i] * g[i];
        }
      }
    });
  }
  return out;
}

Tensor Graph::scalar_mul(const Tensor& x, double k) {
  Tensor out = make_output(x.shape(), x.requires_grad());
  const int64_t n = x.size();
  const double* xp = x.data();
  double* op = out.data();
  for (int64_t i = 0; i < n; ++i) op[i] = k * xp[i];
  if (out.requires_grad()) {
    record([x, out, k, n]() mutable {
      const double* g = out.grad();
      double* gx = x.grad();
      for (int64_t i = 0; i < n; ++i) gx[i] += k * g[i];
    });
  }
  return out;
}

Tensor Graph::sum(const Tensor& x) {
  Tensor out = make_output({1}, x.requires_grad());
  const int64_t n = x.size();
  const double* xp = x.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += xp[i];
  out.data()[0] = acc;
  if (out.requires_grad()) {
    record([x, out, n]() mutable {
      const double g = out.grad()[0];
      double* gx = x.grad();
      for (int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor Graph::sum_squares(const Tensor& x) {
  Tensor out = make_output({1}, x.requires_grad());
  const int64_t n = x.size();
  const double* xp = x.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += xp[i] * xp[i];
  out.data()[0] = acc;
  if (out.requires_grad()) {
    record([x, out, n]() mutable {
      const double g = out.grad()[0];
      const double* xp = x.data();
      double* gx = x.grad();
      for (int64_t i = 0; i < n; ++i) gx[i] += 2.0 * xp[i] * g;
    });
  }
  return out;
}

Tensor Graph::bce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (!logits.same_shape(targets)) {
    throw std::invalid_argument("bce_with_logits: shape mismatch " + shape_str(logits.shape()) +
                                " vs " + shape_str(targets.shape()));
  }
  Tensor out = make_output({1}, logits.requires_grad() || targets.requires_grad());
  const int64_t n = logits.size();
  const double* zp = logits.data();
  const double* tp = targets.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double z = zp[i];
    acc += std::max(z, 0.0) - z * tp[i] + std::log1p(std::exp(-std::abs(z)));
  }
  out.data()[0] = acc / static_cast<double>(n);
  if (out.requires_grad()) {
    record([logits, targets, out, n]() mutable {
      const double g = out.grad()[0] / static_cast<double>(n);
      const double* zp = logits.data();
      const double* tp = targets.data();
      if (logits.requires_grad()) {
        double* gz = logits.grad();
        for (int64_t i = 0; i < n; ++i) {
          const double s = 1.0 / (1.0 + std::exp(-zp[i]));
          gz[i] += (s - tp[i]) * g;
        }
      }
      if (targets.requires_grad()) {
        double* gt = targets.grad();
        for (int64_t i = 0; i < n; ++i) gt[i] += -zp[i] * g;
      }
    });
  }
  return out;
}

Tensor Graph::unary_custom(
    const Tensor& x, const std::function<void(const double*, double*, int64_t)>& fwd,
    const std::function<void(const double*, const double*, double*, int64_t)>& bwd_accum) {
  Tensor out = make_output(x.shape(), x.requires_grad());
  fwd(x.data(), out.data(), x.size());
  if (out.requires_grad()) {
    record([x, out, bwd_accum]() mutable {
      bwd_accum(x.data(), out.grad(), x.grad(), x.size());
    });
  }
  return out;
}

void Graph::backward(const Tensor& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  if (!track_) throw std::logic_error("backward on a non-tracking graph");
  if (!loss.requires_grad()) return;  // constant loss, all grads stay zero
  loss.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw std::invalid_argument("Adam: parameter without gradient buffer");
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    double* p = params_[k].data();
    const double* g = params_[k].grad();
    double* m = m_[k].data();
    double* v = v_[k].data();
    const int64_t n = params_[k].size();
    for (int64_t i = 0; i < n; ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace laneptq
