#include "laneptq/quant.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace laneptq {

void QuantSpec::validate() const {
  if (bits != 4 && bits != 8) throw std::invalid_argument("QuantSpec: bits must be 4 or 8");
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw std::invalid_argument("QuantSpec: scale must be positive and finite");
}

void BitConfig::validate() const {
  if ((weight_bits != 4 && weight_bits != 8) || (activation_bits != 4 && activation_bits != 8))
    throw std::invalid_argument("BitConfig: bits must be 4 or 8");
}

std::string BitConfig::name() const {
  return "w" + std::to_string(weight_bits) + "a" + std::to_string(activation_bits);
}

BitConfig BitConfig::parse(const std::string& s) {
  std::string t;
  for (char c : s) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  BitConfig bc;
  if (t.size() == 4 && t[0] == 'w' && t[2] == 'a') {
    bc.weight_bits = t[1] - '0';
    bc.activation_bits = t[3] - '0';
    bc.validate();
    return bc;
  }
  throw std::invalid_argument("BitConfig: cannot parse '" + s + "', expected e.g. w8a4");
}

namespace {

inline double fq_value(double x, double scale, int qmin, int qmax) {
  double q = std::nearbyint(x / scale);
  if (q < qmin) q = qmin;
  if (q > qmax) q = qmax;
  return q * scale;
}

void fq_array(const double* in, double* out, int64_t n, double scale, int qmin, int qmax) {
  for (int64_t i = 0; i < n; ++i) out[i] = fq_value(in[i], scale, qmin, qmax);
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  const double* p = t.data();
  for (int64_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(p[i]));
  return m;
}

OmseResult grid_mse_search(const Tensor& t, int bits, int grid_points) {
  if (bits != 4 && bits != 8) throw std::invalid_argument("omse: bits must be 4 or 8");
  if (grid_points < 2) throw std::invalid_argument("omse: need at least 2 grid points");
  const int qmax = (1 << (bits - 1)) - 1;
  const int qmin = -(1 << (bits - 1));
  const double amax = max_abs(t);
  if (amax == 0.0) {
    return {std::numeric_limits<double>::epsilon(), true};
  }
  const double base = amax / static_cast<double>(qmax);
  const double lo = 0.2 * base;
  const double hi = 1.2 * base;
  const double step = (hi - lo) / static_cast<double>(grid_points - 1);
  const double* p = t.data();
  const int64_t n = t.size();
  double best_scale = lo;
  double best_mse = std::numeric_limits<double>::infinity();
  for (int k = 0; k < grid_points; ++k) {
    const double s = lo + step * static_cast<double>(k);
    double mse = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double e = fq_value(p[i], s, qmin, qmax) - p[i];
      mse += e * e;
    }
    if (mse < best_mse) {  // strict <: ties resolve to the smaller scale
      best_mse = mse;
      best_scale = s;
    }
  }
  return {best_scale, false};
}

}  // namespace

Tensor fake_quantize(const Tensor& x, const QuantSpec& spec) {
  spec.validate();
  x.check_finite("fake_quantize input");
  Tensor out = Tensor::zeros(x.shape(), false);
  fq_array(x.data(), out.data(), x.size(), spec.scale, spec.qmin(), spec.qmax());
  return out;
}

Tensor fake_quantize(Graph& g, const Tensor& x, const QuantSpec& spec) {
  spec.validate();
  x.check_finite("fake_quantize input");
  const double scale = spec.scale;
  const int qmin = spec.qmin();
  const int qmax = spec.qmax();
  return g.unary_custom(
      x,
      [scale, qmin, qmax](const double* in, double* out, int64_t n) {
        fq_array(in, out, n, scale, qmin, qmax);
      },
      [scale, qmin, qmax](const double* in, const double* gout, double* gin, int64_t n) {
        for (int64_t i = 0; i < n; ++i) {
          const double pre = in[i] / scale;
          if (pre > static_cast<double>(qmin) && pre < static_cast<double>(qmax)) gin[i] += gout[i];
        }
      });
}

void ste_mask(const Tensor& x, const QuantSpec& spec, std::vector<double>& mask_out) {
  spec.validate();
  mask_out.assign(static_cast<size_t>(x.size()), 0.0);
  const double* p = x.data();
  for (int64_t i = 0; i < x.size(); ++i) {
    const double pre = p[i] / spec.scale;
    if (pre > static_cast<double>(spec.qmin()) && pre < static_cast<double>(spec.qmax()))
      mask_out[static_cast<size_t>(i)] = 1.0;
  }
}

OmseResult calibrate_weight_omse(const Tensor& w, int bits, int grid_points) {
  w.check_finite("omse weight input");
  return grid_mse_search(w, bits, grid_points);
}

OmseResult calibrate_activation_batch(const Tensor& acts, int bits, int grid_points) {
  acts.check_finite("omse activation input");
  return grid_mse_search(acts, bits, grid_points);
}

void EmaScale::update(double batch_best, double momentum) {
  if (momentum < 0.0 || momentum > 1.0)
    throw std::invalid_argument("EmaScale: momentum must be in [0, 1]");
  if (!initialized_) {
    value_ = batch_best;
    initialized_ = true;
    return;
  }
  value_ = momentum * value_ + (1.0 - momentum) * batch_best;
}

}  // namespace laneptq
