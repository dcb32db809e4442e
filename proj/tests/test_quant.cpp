#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "laneptq/quant.hpp"
#include "laneptq/rng.hpp"

using namespace laneptq;

namespace {

// Independent fake-quantize evaluation for the oracle paths.
double oracle_fq(double x, double s, int bits) {
  const double qmax = std::pow(2.0, bits - 1) - 1.0;
  const double qmin = -std::pow(2.0, bits - 1);
  double q = std::round(x / s);
  q = std::min(std::max(q, qmin), qmax);
  return q * s;
}

// Exhaustive grid argmin with its own MSE evaluation.
double oracle_omse(const std::vector<double>& w, int bits, int grid_points = 100) {
  double amax = 0.0;
  for (double v : w) amax = std::max(amax, std::abs(v));
  const double qmax = std::pow(2.0, bits - 1) - 1.0;
  const double lo = 0.2 * amax / qmax, hi = 1.2 * amax / qmax;
  double best_s = lo, best_mse = 1e300;
  for (int k = 0; k < grid_points; ++k) {
    const double s = lo + (hi - lo) * k / (grid_points - 1);
    double mse = 0.0;
    for (double v : w) {
      const double e = oracle_fq(v, s, bits) - v;
      mse += e * e;
    }
    if (mse < best_mse) {
      best_mse = mse;
      best_s = s;
    }
  }
  return best_s;
}

QuantSpec spec_of(double scale, int bits) {
  QuantSpec s;
  s.scale = scale;
  s.bits = bits;
  return s;
}

}  // namespace

TEST_SUITE("quant") {

TEST_CASE("fake_quantize hand cases") {
  CHECK(fake_quantize(Tensor::scalar(0.0), spec_of(0.37, 8)).item() == 0.0);
  // round(0.26 / 0.1) = 3 -> 0.3
  CHECK(fake_quantize(Tensor::scalar(0.26), spec_of(0.1, 8)).item() ==
        doctest::Approx(0.3).epsilon(1e-12));
  // clamp(round(50), -8, 7) = 7 -> 0.7
  CHECK(fake_quantize(Tensor::scalar(5.0), spec_of(0.1, 4)).item() ==
        doctest::Approx(0.7).epsilon(1e-12));
  // negative clamp edge
  CHECK(fake_quantize(Tensor::scalar(-5.0), spec_of(0.1, 4)).item() ==
        doctest::Approx(-0.8).epsilon(1e-12));
}

TEST_CASE("non-finite input is rejected") {
  Tensor bad = Tensor::from_values({2}, {1.0, std::nan("")});
  CHECK_THROWS(fake_quantize(bad, spec_of(0.1, 8)));
  CHECK_THROWS(spec_of(-1.0, 8).validate());
  CHECK_THROWS(spec_of(1.0, 5).validate());
}

TEST_CASE("idempotence is exact") {
  Rng rng(21);
  for (int bits : {4, 8}) {
    for (int trial = 0; trial < 20; ++trial) {
      QuantSpec spec = spec_of(rng.uniform(0.01, 0.5), bits);
      Tensor x = Tensor::zeros({64});
      for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-4.0, 4.0);
      Tensor once = fake_quantize(x, spec);
      Tensor twice = fake_quantize(once, spec);
      for (int64_t i = 0; i < x.size(); ++i) CHECK(once.data()[i] == twice.data()[i]);
    }
  }
}

TEST_CASE("error is bounded by scale/2 inside the clamp range") {
  Rng rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    const int bits = trial % 2 ? 4 : 8;
    QuantSpec spec = spec_of(rng.uniform(0.05, 0.3), bits);
    const double hi = (spec.qmax() - 0.5) * spec.scale;
    const double lo = (spec.qmin() + 0.5) * spec.scale;
    const double x = rng.uniform(lo, hi);
    const double err = std::abs(fake_quantize(Tensor::scalar(x), spec).item() - x);
    CHECK(err <= spec.scale * 0.5 + 1e-15);
  }
}

TEST_CASE("STE backward equals the strict clamp-interior indicator") {
  Rng rng(23);
  for (int bits : {4, 8}) {
    QuantSpec spec = spec_of(0.1, bits);
    Tensor x = Tensor::zeros({256}, true);
    for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-2.0, 2.0);
    // add the exact boundary values: pre-round at qmin/qmax must gate to 0
    x.data()[0] = spec.qmax() * spec.scale;
    x.data()[1] = spec.qmin() * spec.scale;
    Graph g;
    Tensor y = fake_quantize(g, x, spec);
    g.backward(g.sum(y));
    std::vector<double> mask;
    ste_mask(x, spec, mask);
    for (int64_t i = 0; i < x.size(); ++i) {
      const double pre = x.data()[i] / spec.scale;
      const double expect =
          (pre > spec.qmin() && pre < spec.qmax()) ? 1.0 : 0.0;  // the rule itself
      CHECK(x.grad()[i] == expect);
      CHECK(mask[static_cast<size_t>(i)] == expect);
    }
    CHECK(x.grad()[0] == 0.0);
    CHECK(x.grad()[1] == 0.0);
  }
}

TEST_CASE("a dense sweep produces at most 2^bits distinct levels") {
  for (int bits : {4, 8}) {
    QuantSpec spec = spec_of(0.07, bits);
    std::set<double> levels;
    for (int i = 0; i <= 20000; ++i) {
      const double x = -3.0 + 6.0 * i / 20000.0;
      levels.insert(fake_quantize(Tensor::scalar(x), spec).item());
    }
    CHECK(static_cast<int>(levels.size()) <= (1 << bits));
    CHECK(static_cast<int>(levels.size()) > (1 << bits) / 2);  // sweep actually spans the range
  }
}

TEST_CASE("OMSE matches the independent exhaustive oracle on random tensors") {
  Rng rng(24);
  for (int trial = 0; trial < 20; ++trial) {
    const int bits = trial % 2 ? 4 : 8;
    const int n = 200 + static_cast<int>(rng.uniform_int(200));
    std::vector<double> vals(static_cast<size_t>(n));
    const double spread = rng.uniform(0.1, 3.0);
    for (auto& v : vals) v = rng.normal(0.0, spread);
    Tensor w = Tensor::from_values({n}, vals);
    OmseResult got = calibrate_weight_omse(w, bits);
    CHECK(!got.degenerate);
    CHECK(got.scale == doctest::Approx(oracle_omse(vals, bits)).epsilon(1e-12));
  }
}

TEST_CASE("OMSE on +/-1 lands within 1% of 1/127 at 8 bits") {
  std::vector<double> vals;
  for (int i = 0; i < 128; ++i) vals.push_back(i % 2 ? 1.0 : -1.0);
  OmseResult r = calibrate_weight_omse(Tensor::from_values({128}, vals), 8);
  CHECK(std::abs(r.scale - 1.0 / 127.0) / (1.0 / 127.0) < 0.01);
  CHECK(r.scale == doctest::Approx(oracle_omse(vals, 8)).epsilon(1e-12));
}

TEST_CASE("OMSE clips a lone outlier at 4 bits") {
  Rng rng(25);
  std::vector<double> vals(1000);
  for (auto& v : vals) v = rng.uniform() < 0.5 ? -1.0 : 1.0;
  vals.push_back(10.0);
  OmseResult r = calibrate_weight_omse(Tensor::from_values({1001}, vals), 4);
  CHECK(r.scale < 10.0 / 7.0);  // clipping beats covering the outlier
  CHECK(r.scale == doctest::Approx(oracle_omse(vals, 4)).epsilon(1e-12));
}

TEST_CASE("OMSE flags the all-zero tensor") {
  OmseResult r = calibrate_weight_omse(Tensor::zeros({32}), 8);
  CHECK(r.degenerate);
  CHECK(r.scale == std::numeric_limits<double>::epsilon());
}

TEST_CASE("activation EMA blending") {
  EmaScale ema;
  ema.update(2.0, 0.9);  // first batch initializes
  CHECK(ema.value() == 2.0);

  EmaScale ema2;
  ema2.update(1.0, 0.9);
  ema2.update(2.0, 0.9);
  CHECK(ema2.value() == doctest::Approx(1.1).epsilon(1e-12));

  EmaScale ema3;
  ema3.update(1.0, 1.0);
  ema3.update(5.0, 1.0);  // identity momentum keeps the running value
  CHECK(ema3.value() == 1.0);
  CHECK_THROWS(ema3.update(1.0, 1.5));
}

TEST_CASE("bit config parsing") {
  CHECK(BitConfig::parse("w8a8").name() == "w8a8");
  CHECK(BitConfig::parse("W4A4").weight_bits == 4);
  CHECK(BitConfig::parse("w8a4").activation_bits == 4);
  CHECK_THROWS(BitConfig::parse("w16a8"));
  CHECK_THROWS(BitConfig::parse("8w8a"));
}

}  // TEST_SUITE
