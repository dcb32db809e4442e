#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "laneptq/rng.hpp"
#include "laneptq/tensor.hpp"

using namespace laneptq;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                     bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (int64_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// Independent convolution oracle: per-output-element window sum, no shared
// code with Graph::conv2d.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int O = w.shape()[0];
  const int Ho = (H - 1) / stride + 1;
  const int Wo = (W - 1) / stride + 1;
  std::vector<double> out(static_cast<size_t>(O) * Ho * Wo, 0.0);
  for (int o = 0; o < O; ++o) {
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        double acc = b.data()[o];
        for (int ci = 0; ci < C; ++ci) {
          for (int ky = 0; ky < 3; ++ky) {
            for (int kx = 0; kx < 3; ++kx) {
              const int iy = oy * stride + ky - 1;
              const int ix = ox * stride + kx - 1;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += w.data()[((o * C + ci) * 3 + ky) * 3 + kx] *
                     x.data()[(ci * H + iy) * W + ix];
            }
          }
        }
        out[static_cast<size_t>((o * Ho + oy) * Wo + ox)] = acc;
      }
    }
  }
  return out;
}

// Central finite differences of a scalar-valued graph function with respect
// to every element of `probe`, compared to the recorded backward rule.
void check_gradients(const std::function<Tensor(Graph&)>& build, Tensor probe,
                     double tol = 1e-4) {
  Graph g;
  Tensor loss = build(g);
  g.backward(loss);
  std::vector<double> analytic(probe.grad(), probe.grad() + probe.size());

  const double eps = 1e-4;
  for (int64_t i = 0; i < probe.size(); ++i) {
    const double saved = probe.data()[i];
    probe.data()[i] = saved + eps;
    Graph gp(false);
    const double up = build(gp).item();
    probe.data()[i] = saved - eps;
    Graph gm(false);
    const double down = build(gm).item();
    probe.data()[i] = saved;
    const double fd = (up - down) / (2.0 * eps);
    const double rel = std::abs(analytic[static_cast<size_t>(i)] - fd) /
                       std::max(1.0, std::abs(fd));
    CHECK(rel < tol);
  }
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("relu and sigmoid fixed points") {
  Graph g;
  Tensor x = Tensor::from_values({3}, {-1.0, 0.0, 2.0});
  Tensor y = g.relu(x);
  CHECK(y.data()[0] == 0.0);
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == 2.0);
  Tensor s = g.sigmoid(Tensor::scalar(0.0));
  CHECK(s.item() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("conv2d all-ones 3x3 matches the window-sum values") {
  Graph g;
  Tensor x = Tensor::full({1, 3, 3}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor b = Tensor::zeros({1});
  Tensor y = g.conv2d(x, w, b, 1);
  // pad-1 window sums: corners see a 2x2 patch, the center the full 3x3
  CHECK(y.data()[4] == doctest::Approx(9.0));
  CHECK(y.data()[0] == doctest::Approx(4.0));
  CHECK(y.data()[2] == doctest::Approx(4.0));
  CHECK(y.data()[6] == doctest::Approx(4.0));
  CHECK(y.data()[8] == doctest::Approx(4.0));
  CHECK(y.data()[1] == doctest::Approx(6.0));
}

TEST_CASE("conv2d matches the independent oracle on random tensors") {
  Rng rng(101);
  for (int stride : {1, 2}) {
    for (int trial = 0; trial < 8; ++trial) {
      Tensor x = random_tensor({3, 7, 6}, rng, -1.0, 1.0, false);
      Tensor w = random_tensor({4, 3, 3, 3}, rng, -1.0, 1.0, false);
      Tensor b = random_tensor({4}, rng, -1.0, 1.0, false);
      Graph g(false);
      Tensor y = g.conv2d(x, w, b, stride);
      auto expect = conv_oracle(x, w, b, stride);
      REQUIRE(y.size() == static_cast<int64_t>(expect.size()));
      for (int64_t i = 0; i < y.size(); ++i)
        CHECK(y.data()[i] == doctest::Approx(expect[static_cast<size_t>(i)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d rejects shape mismatches") {
  Graph g;
  Tensor x = Tensor::zeros({3, 5, 5});
  Tensor w = Tensor::zeros({4, 2, 3, 3});  // channel mismatch
  Tensor b = Tensor::zeros({4});
  CHECK_THROWS_AS(g.conv2d(x, w, b, 1), std::invalid_argument);
  CHECK_THROWS_AS(g.conv2d(x, Tensor::zeros({4, 3, 3, 3}), Tensor::zeros({2}), 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(g.add(Tensor::zeros({2}), Tensor::zeros({3})), std::invalid_argument);
}

TEST_CASE("finite differences: dense") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({5}, rng);
    Tensor w = random_tensor({3, 5}, rng);
    Tensor b = random_tensor({3}, rng);
    Tensor probe = (trial % 3 == 0) ? x : (trial % 3 == 1 ? w : b);
    check_gradients([&](Graph& g) { return g.sum_squares(g.dense(x, w, b)); }, probe);
  }
}

TEST_CASE("finite differences: conv2d stride 1 and 2") {
  Rng rng(8);
  for (int stride : {1, 2}) {
    for (int trial = 0; trial < 6; ++trial) {
      Tensor x = random_tensor({2, 6, 5}, rng);
      Tensor w = random_tensor({3, 2, 3, 3}, rng);
      Tensor b = random_tensor({3}, rng);
      Tensor probe = (trial % 3 == 0) ? x : (trial % 3 == 1 ? w : b);
      check_gradients([&](Graph& g) { return g.sum_squares(g.conv2d(x, w, b, stride)); }, probe);
    }
  }
}

TEST_CASE("finite differences: elementwise ops and reductions") {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = random_tensor({2, 4, 4}, rng);
    Tensor b = random_tensor({2, 4, 4}, rng);
    Tensor m = random_tensor({1, 4, 4}, rng);

    // keep relu probes away from the kink: |a| > 0.01
    for (int64_t i = 0; i < a.size(); ++i)
      if (std::abs(a.data()[i]) < 0.02) a.data()[i] = 0.05;

    check_gradients([&](Graph& g) { return g.sum(g.relu(a)); }, a);
    check_gradients([&](Graph& g) { return g.sum_squares(g.sigmoid(a)); }, a);
    check_gradients([&](Graph& g) { return g.sum_squares(g.add(a, b)); }, a);
    check_gradients([&](Graph& g) { return g.sum_squares(g.sub(a, b)); }, b);
    check_gradients([&](Graph& g) { return g.sum_squares(g.mul(a, b)); }, a);
    check_gradients([&](Graph& g) { return g.sum_squares(g.mul(m, b)); }, m);  // broadcast lhs
    check_gradients([&](Graph& g) { return g.sum_squares(g.mul(m, b)); }, b);
    check_gradients([&](Graph& g) { return g.sum(g.scalar_mul(a, -1.7)); }, a);
  }
}

TEST_CASE("finite differences: bce_with_logits") {
  Rng rng(10);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor z = random_tensor({12}, rng, -3.0, 3.0);
    Tensor t = random_tensor({12}, rng, 0.0, 1.0, false);
    check_gradients([&](Graph& g) { return g.bce_with_logits(z, t); }, z);
  }
}

TEST_CASE("backward of a constant loss leaves gradients at zero") {
  Graph g;
  Tensor p = Tensor::from_values({2}, {1.0, 2.0}, true);
  Tensor c = Tensor::scalar(3.0);  // no requires_grad
  Tensor loss = g.sum(c);
  g.backward(loss);
  CHECK(p.grad()[0] == 0.0);
  CHECK(p.grad()[1] == 0.0);
}

TEST_CASE("relu subgradient is 0 at negative inputs") {
  Graph g;
  Tensor p = Tensor::from_values({2}, {-1.0, 2.0}, true);
  Tensor loss = g.sum(g.relu(p));
  g.backward(loss);
  CHECK(p.grad()[0] == 0.0);
  CHECK(p.grad()[1] == 1.0);
}

TEST_CASE("backward accumulates across fan-out and repeated calls") {
  Tensor p = Tensor::from_values({1}, {2.0}, true);
  {
    Graph g;
    Tensor y = g.add(p, p);  // dy/dp = 2
    g.backward(g.sum(y));
    CHECK(p.grad()[0] == doctest::Approx(2.0));
  }
  p.zero_grad();
  {
    Graph g;
    Tensor loss = g.sum(p);
    g.backward(loss);
    g.backward(loss);  // documented: second call accumulates
    CHECK(p.grad()[0] == doctest::Approx(2.0));
  }
}

TEST_CASE("linearity of backward") {
  Rng rng(11);
  Tensor p = random_tensor({6}, rng);
  Tensor q = random_tensor({6}, rng, -1.0, 1.0, false);
  const double a = 1.7, b = -0.3;

  auto grad_of = [&](const std::function<Tensor(Graph&)>& fn) {
    p.zero_grad();
    Graph g;
    g.backward(fn(g));
    return std::vector<double>(p.grad(), p.grad() + p.size());
  };
  auto f = [&](Graph& g) { return g.sum_squares(g.mul(p, q)); };
  auto h = [&](Graph& g) { return g.sum(g.sigmoid(p)); };
  auto combo = [&](Graph& g) {
    return g.add(g.scalar_mul(f(g), a), g.scalar_mul(h(g), b));
  };
  auto gf = grad_of(f), gh = grad_of(h), gc = grad_of(combo);
  for (size_t i = 0; i < gf.size(); ++i)
    CHECK(gc[i] == doctest::Approx(a * gf[i] + b * gh[i]).epsilon(1e-12));
}

TEST_CASE("identical seeds give identical values and grads") {
  auto run = [] {
    Rng rng(42);
    Tensor x = random_tensor({2, 5, 5}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng);
    Tensor b = random_tensor({3}, rng);
    Graph g;
    Tensor loss = g.sum_squares(g.relu(g.conv2d(x, w, b, 1)));
    g.backward(loss);
    std::vector<double> out(w.grad(), w.grad() + w.size());
    out.push_back(loss.item());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("adam: zero learning rate leaves parameters unchanged") {
  Tensor p = Tensor::from_values({3}, {1.0, -2.0, 0.5}, true);
  Adam opt({p}, 0.0);
  p.grad()[0] = 1.0;
  p.grad()[1] = -4.0;
  p.grad()[2] = 0.25;
  opt.step();
  CHECK(p.data()[0] == 1.0);
  CHECK(p.data()[1] == -2.0);
  CHECK(p.data()[2] == 0.5);
}

TEST_CASE("adam: first bias-corrected step of the hand example") {
  Tensor p = Tensor::from_values({1}, {1.0}, true);
  Adam opt({p}, 0.1, 0.9, 0.999, 1e-8);
  p.grad()[0] = 1.0;
  opt.step();
  // m_hat = 1, v_hat = 1 -> p = 1 - 0.1 * 1/(1 + 1e-8)
  CHECK(p.data()[0] == doctest::Approx(0.9).epsilon(1e-7));
}

TEST_CASE("adam: two steps match a scalar reference bit for bit") {
  // reference implementation with the same float evaluation order
  double rp = 1.0, rm = 0.0, rv = 0.0;
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8, grad = 0.7;
  for (int t = 1; t <= 2; ++t) {
    rm = b1 * rm + (1.0 - b1) * grad;
    rv = b2 * rv + (1.0 - b2) * grad * grad;
    const double mhat = rm / (1.0 - std::pow(b1, static_cast<double>(t)));
    const double vhat = rv / (1.0 - std::pow(b2, static_cast<double>(t)));
    rp -= lr * mhat / (std::sqrt(vhat) + eps);
  }

  Tensor p = Tensor::from_values({1}, {1.0}, true);
  Adam opt({p}, lr, b1, b2, eps);
  for (int t = 0; t < 2; ++t) {
    p.zero_grad();
    p.grad()[0] = grad;
    opt.step();
  }
  CHECK(p.data()[0] == rp);  // bitwise
}

}  // TEST_SUITE
