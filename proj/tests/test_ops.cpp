#include <cmath>
#include <vector>

#include "doctest.h"
#include "dsts/common.hpp"
#include "dsts/ops.hpp"
#include "dsts/rng.hpp"

using namespace dsts;

namespace {

Tensor randn(std::vector<int> shape, uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  rng.fill_normal(t.data(), t.numel());
  return t;
}

// Direct six-loop convolution, no im2col, no BLAS. The reference the fast
// path is checked against.
Tensor conv_naive(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  int n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int co = w.dim(0), k = w.dim(2);
  int ho = (h + 2 * pad - k) / stride + 1;
  int wo = (wd + 2 * pad - k) / stride + 1;
  Tensor out({n, co, ho, wo});
  for (int in = 0; in < n; ++in)
    for (int oc = 0; oc < co; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = b[oc];
          for (int ic = 0; ic < ci; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                int iy = oy * stride + ky - pad;
                int ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                double xv = x[((static_cast<int64_t>(in) * ci + ic) * h + iy) * wd + ix];
                double wv = w[((static_cast<int64_t>(oc) * ci + ic) * k + ky) * k + kx];
                acc += xv * wv;
              }
          out[((static_cast<int64_t>(in) * co + oc) * ho + oy) * wo + ox] =
              static_cast<float>(acc);
        }
  return out;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  float worst = 0.0f;
  for (int64_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

double dot_all(const Tensor& a, const Tensor& b) {
  REQUIRE(a.numel() == b.numel());
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

Tensor eval_unary(Var (*op)(Graph&, Var), const Tensor& x) {
  Graph g(false);
  return g.value(op(g, g.leaf(x)));
}

}  // namespace

TEST_CASE("conv2d matches the naive loop") {
  Tensor b = randn({3}, 30);
  Tensor x = randn({1, 2, 6, 6}, 31);
  Tensor w = randn({3, 2, 4, 4}, 32);
  Graph g(false);
  Tensor fast = g.value(conv2d(g, g.leaf(x), g.leaf(w), g.leaf(b), 2, 1));
  Tensor ref = conv_naive(x, w, b, 2, 1);
  CHECK(fast.same_shape(ref));
  CHECK(max_abs_diff(fast, ref) < 1e-5f);
}

TEST_CASE("conv2d matches the naive loop, stride 1 no pad") {
  Tensor x = randn({2, 3, 5, 5}, 33);
  Tensor w = randn({4, 3, 3, 3}, 34);
  Tensor b = randn({4}, 35);
  Graph g(false);
  Tensor fast = g.value(conv2d(g, g.leaf(x), g.leaf(w), g.leaf(b), 1, 0));
  CHECK(max_abs_diff(fast, conv_naive(x, w, b, 1, 0)) < 1e-5f);
}

TEST_CASE("conv2d output extents follow the formula") {
  Graph g(false);
  Var x = g.leaf(randn({2, 4, 64, 64}, 36));
  Var w = g.leaf(randn({32, 4, 4, 4}, 37));
  Var b = g.leaf(Tensor({32}));
  Var y = conv2d(g, x, w, b, 2, 1);
  CHECK(g.value(y).shape() == std::vector<int>{2, 32, 32, 32});

  CHECK_THROWS_AS(conv2d(g, x, g.leaf(randn({32, 3, 4, 4}, 38)), b, 2, 1), ConfigError);
  CHECK_THROWS_AS(conv2d(g, x, w, g.leaf(Tensor({31})), 2, 1), ConfigError);
  CHECK_THROWS_AS(conv2d(g, x, w, b, 0, 1), ConfigError);
}

TEST_CASE("conv_transpose2d inverts conv2d geometry") {
  Graph g(false);
  Var x = g.leaf(randn({2, 8, 4, 4}, 39));
  Var w = g.leaf(randn({8, 5, 4, 4}, 40));
  Var b = g.leaf(Tensor({5}));
  // (4-1)*2 - 2*1 + 4 = 8
  CHECK(g.value(conv_transpose2d(g, x, w, b, 2, 1)).shape() == std::vector<int>{2, 5, 8, 8});
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
  Tensor a = randn({2, 3, 8, 8}, 41);
  Tensor w = randn({5, 3, 4, 4}, 42);
  Tensor zb_o(std::vector<int>{5});
  Tensor zb_i(std::vector<int>{3});
  Graph g(false);
  Tensor ca = g.value(conv2d(g, g.leaf(a), g.leaf(w), g.leaf(zb_o), 2, 1));  // 2x5x4x4
  Tensor bt = randn(ca.shape(), 43);
  Tensor tb = g.value(conv_transpose2d(g, g.leaf(bt), g.leaf(w), g.leaf(zb_i), 2, 1));
  REQUIRE(tb.same_shape(a));
  double lhs = dot_all(ca, bt);
  double rhs = dot_all(a, tb);
  CHECK(std::abs(lhs - rhs) < 1e-4 * (1.0 + std::abs(lhs)));
}

TEST_CASE("batch norm training normalizes the batch") {
  Tensor x = randn({4, 3, 5, 5}, 44);
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = x[i] * 2.0f + 1.0f;
  Tensor gamma = Tensor::full({3}, 1.0f);
  Tensor beta(std::vector<int>{3});
  Tensor rm(std::vector<int>{3});
  Tensor rv = Tensor::full({3}, 1.0f);

  Graph g(false);
  Tensor y = g.value(batch_norm(g, g.leaf(x), g.leaf(gamma), g.leaf(beta), rm, rv, true));

  int64_t per = 4 * 5 * 5;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 25; ++i) {
        double v = y[(static_cast<int64_t>(n) * 3 + c) * 25 + i];
        sum += v;
        sq += v * v;
      }
    double mean = sum / static_cast<double>(per);
    double var = sq / static_cast<double>(per) - mean * mean;
    CHECK(std::abs(mean) < 1e-4);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }

  // Running stats moved toward the batch stats with momentum 0.1.
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0;
    for (int n = 0; n < 4; ++n)
      for (int64_t i = 0; i < 25; ++i) sum += x[(static_cast<int64_t>(n) * 3 + c) * 25 + i];
    double bm = sum / static_cast<double>(per);
    CHECK(rm[c] == doctest::Approx(0.1 * bm).epsilon(1e-4));
    CHECK(rv[c] > 1.0f);  // batch var ~4 pulls the running var up from 1
  }
}

TEST_CASE("batch norm eval applies the closed form") {
  Tensor x({1, 1, 1, 2}, {1.0f, 3.0f});
  Tensor gamma({1}, {2.0f});
  Tensor beta({1}, {0.5f});
  Tensor rm({1}, {1.0f});
  Tensor rv({1}, {4.0f});
  Graph g(false);
  Tensor y = g.value(batch_norm(g, g.leaf(x), g.leaf(gamma), g.leaf(beta), rm, rv, false));
  float eps = 1e-5f;
  CHECK(y[0] == doctest::Approx(0.5f).epsilon(1e-6));
  CHECK(y[1] == doctest::Approx(2.0f * 2.0f / std::sqrt(4.0f + eps) + 0.5f).epsilon(1e-6));
  // Eval mode must not touch the running stats.
  CHECK(rm[0] == 1.0f);
  CHECK(rv[0] == 4.0f);
}

TEST_CASE("batch norm training rejects a single-element batch") {
  Tensor gamma = Tensor::full({2}, 1.0f);
  Tensor beta(std::vector<int>{2});
  Tensor rm(std::vector<int>{2});
  Tensor rv = Tensor::full({2}, 1.0f);
  Graph g(false);
  Var x = g.leaf(randn({1, 2, 1, 1}, 45));
  CHECK_THROWS_AS(batch_norm(g, x, g.leaf(gamma), g.leaf(beta), rm, rv, true), ConfigError);
}

TEST_CASE("activation values") {
  Tensor x({5}, {-2.0f, -0.5f, 0.0f, 0.5f, 2.0f});

  Tensor t = eval_unary(+[](Graph& g, Var v) { return tanh(g, v); }, x);
  for (int i = 0; i < 5; ++i) CHECK(t[i] == doctest::Approx(std::tanh(x[i])).epsilon(1e-6));

  Tensor s = eval_unary(+[](Graph& g, Var v) { return sigmoid(g, v); }, x);
  for (int i = 0; i < 5; ++i)
    CHECK(s[i] == doctest::Approx(1.0f / (1.0f + std::exp(-x[i]))).epsilon(1e-6));

  Tensor e = eval_unary(+[](Graph& g, Var v) { return exp(g, v); }, x);
  CHECK(e[4] == doctest::Approx(std::exp(2.0f)).epsilon(1e-6));

  Tensor q = eval_unary(+[](Graph& g, Var v) { return square(g, v); }, x);
  CHECK(q[0] == 4.0f);

  Graph g(false);
  Tensor l = g.value(leaky_relu(g, g.leaf(x), 0.2f));
  CHECK(l[0] == doctest::Approx(-0.4f));
  CHECK(l[4] == 2.0f);

  Tensor c = g.value(clamp(g, g.leaf(x), -1.0f, 1.0f));
  CHECK(c[0] == -1.0f);
  CHECK(c[3] == 0.5f);
  CHECK(c[4] == 1.0f);
}

TEST_CASE("elementwise arithmetic and shape guards") {
  Graph g(false);
  Var a = g.leaf(Tensor({2}, {1.0f, 2.0f}));
  Var b = g.leaf(Tensor({2}, {10.0f, 20.0f}));
  CHECK(g.value(add(g, a, b))[1] == 22.0f);
  CHECK(g.value(sub(g, a, b))[0] == -9.0f);
  CHECK(g.value(mul(g, a, b))[1] == 40.0f);
  CHECK(g.value(scale(g, a, -3.0f))[0] == -3.0f);
  CHECK(g.value(add_const(g, a, 1.5f))[0] == 2.5f);
  CHECK(g.value(rsub_const(g, 1.0f, a))[1] == -1.0f);
  CHECK_THROWS_AS(add(g, a, g.leaf(Tensor({3}))), ConfigError);
}

TEST_CASE("shape ops") {
  Graph g(false);
  Var a = g.leaf(randn({2, 3, 2, 2}, 46));
  CHECK(g.value(reshape(g, a, {2, 12})).shape() == std::vector<int>{2, 12});
  CHECK_THROWS_AS(reshape(g, a, {5, 5}), ConfigError);

  Var b = g.leaf(randn({2, 1, 2, 2}, 47));
  CHECK(g.value(concat_channels(g, a, b)).shape() == std::vector<int>{2, 4, 2, 2});
  // Channel c of the result comes from a for c < 3, from b after.
  Tensor cat = g.value(concat_channels(g, a, b));
  CHECK(cat[0] == g.value(a)[0]);
  CHECK(cat[3 * 4] == g.value(b)[0]);

  Var v = g.leaf(Tensor({1, 2}, {3.0f, 4.0f}));
  Tensor tiled = g.value(tile_spatial(g, v, 2, 2));
  CHECK(tiled.shape() == std::vector<int>{1, 2, 2, 2});
  CHECK(tiled[0] == 3.0f);
  CHECK(tiled[3] == 3.0f);
  CHECK(tiled[4] == 4.0f);

  Tensor sm = g.value(spatial_mean(g, g.leaf(Tensor({1, 1, 1, 4}, {1.0f, 2.0f, 3.0f, 6.0f}))));
  CHECK(sm.shape() == std::vector<int>{1, 1});
  CHECK(sm[0] == 3.0f);
}

TEST_CASE("reductions") {
  Graph g(false);
  Var a = g.leaf(Tensor({4}, {1.0f, 2.0f, 3.0f, 4.0f}));
  CHECK(g.value(sum_all(g, a))[0] == 10.0f);
  CHECK(g.value(mean_all(g, a))[0] == 2.5f);
  CHECK(g.value(mean_all(g, a)).shape() == std::vector<int>{1});
}

TEST_CASE("fully connected hand fixture") {
  Graph g(false);
  Var x = g.leaf(Tensor({1, 2}, {1.0f, 2.0f}));
  Var w = g.leaf(Tensor({2, 3}, {1.0f, 2.0f, 3.0f, 4.0f, 5.0f, 6.0f}));
  Var b = g.leaf(Tensor({3}, {1.0f, 1.0f, 1.0f}));
  Tensor y = g.value(fully_connected(g, x, w, b));
  CHECK(y.shape() == std::vector<int>{1, 3});
  CHECK(y[0] == 10.0f);
  CHECK(y[1] == 13.0f);
  CHECK(y[2] == 16.0f);
  CHECK_THROWS_AS(fully_connected(g, x, g.leaf(Tensor({3, 3})), b), ConfigError);
}

TEST_CASE("mean_abs_diff value") {
  Graph g(false);
  Var a = g.leaf(Tensor({2}, {1.0f, -1.0f}));
  Var b = g.leaf(Tensor({2}, {0.0f, 3.0f}));
  CHECK(g.value(mean_abs_diff(g, a, b))[0] == doctest::Approx(2.5f));
}

TEST_CASE("kl_gaussian closed form") {
  Graph g(false);
  Var m0 = g.leaf(Tensor({2, 4}));
  Var l0 = g.leaf(Tensor({2, 4}));
  CHECK(g.value(kl_gaussian(g, m0, l0))[0] == doctest::Approx(0.0f).epsilon(1e-7));

  Var m1 = g.leaf(Tensor::full({2, 4}, 1.0f));
  // -1/2 * sum_d (1 + 0 - 1 - 1) = d/2 per sample
  CHECK(g.value(kl_gaussian(g, m1, l0))[0] == doctest::Approx(2.0f).epsilon(1e-6));
}

TEST_CASE("softmax cross entropy of uniform logits is log K") {
  Graph g(false);
  Var logits = g.leaf(Tensor({3, 5}));
  std::vector<int> labels{0, 2, 4};
  CHECK(g.value(softmax_cross_entropy(g, logits, labels))[0] ==
        doctest::Approx(std::log(5.0f)).epsilon(1e-6));
  CHECK_THROWS_AS(softmax_cross_entropy(g, logits, {0, 1}), ConfigError);
  CHECK_THROWS_AS(softmax_cross_entropy(g, logits, {0, 1, 5}), ConfigError);
}

TEST_CASE("softmax cross entropy is shift invariant") {
  Tensor raw = randn({4, 6}, 48);
  Tensor shifted = raw;
  for (int64_t i = 0; i < shifted.numel(); ++i) shifted[i] += 100.0f;
  std::vector<int> labels{1, 0, 5, 3};
  Graph g(false);
  float a = g.value(softmax_cross_entropy(g, g.leaf(raw), labels))[0];
  float b = g.value(softmax_cross_entropy(g, g.leaf(shifted), labels))[0];
  CHECK(a == doctest::Approx(b).epsilon(1e-4));
}

TEST_CASE("softmax_rows sums to one") {
  Tensor p = softmax_rows(randn({3, 7}, 49));
  for (int n = 0; n < 3; ++n) {
    float s = 0.0f;
    for (int k = 0; k < 7; ++k) s += p[n * 7 + k];
    CHECK(s == doctest::Approx(1.0f).epsilon(1e-5));
  }
}

TEST_CASE("reparameterize applies mean + exp(logvar/2) * eps") {
  Graph g(false);
  Var mean = g.leaf(Tensor({1, 2}, {1.0f, -1.0f}));
  Var logvar = g.leaf(Tensor({1, 2}, {0.0f, 2.0f}));
  Tensor eps({1, 2}, {1.0f, 0.5f});
  Tensor z = g.value(reparameterize(g, mean, logvar, eps));
  CHECK(z[0] == doctest::Approx(2.0f).epsilon(1e-6));
  CHECK(z[1] == doctest::Approx(-1.0f + std::exp(1.0f) * 0.5f).epsilon(1e-6));
}

TEST_CASE("clamp blocks gradient outside the range") {
  Graph g;
  Var x = g.leaf(Tensor({3}, {-2.0f, 0.0f, 2.0f}), true);
  g.backward(sum_all(g, clamp(g, x, -1.0f, 1.0f)));
  const Tensor& gx = g.grad(x);
  CHECK(gx[0] == 0.0f);
  CHECK(gx[1] == 1.0f);
  CHECK(gx[2] == 0.0f);
}
