#include "doctest.h"
#include "dsts/common.hpp"
#include "dsts/graph.hpp"
#include "dsts/ops.hpp"

using namespace dsts;

TEST_CASE("sum backpropagates ones") {
  Graph g;
  Var x = g.leaf(Tensor({3}, {1.0f, 2.0f, 3.0f}), true);
  Var s = sum_all(g, x);
  CHECK(g.value(s)[0] == 6.0f);
  g.backward(s);
  const Tensor& gx = g.grad(x);
  for (int i = 0; i < 3; ++i) CHECK(gx[i] == 1.0f);
}

TEST_CASE("x*x differentiates to 2x") {
  Graph g;
  Var x = g.leaf(Tensor({2}, {1.0f, -2.0f}), true);
  g.backward(sum_all(g, mul(g, x, x)));
  CHECK(g.grad(x)[0] == doctest::Approx(2.0f));
  CHECK(g.grad(x)[1] == doctest::Approx(-4.0f));
}

TEST_CASE("repeated backward accumulates") {
  Graph g;
  Var x = g.leaf(Tensor({2}, {1.0f, 1.0f}), true);
  Var s = sum_all(g, x);
  g.backward(s);
  g.backward(s);
  CHECK(g.grad(x)[0] == 2.0f);
  g.zero_grads();
  CHECK_FALSE(g.has_grad(x));
  g.backward(s);
  CHECK(g.grad(x)[0] == 1.0f);
}

TEST_CASE("a leaf used twice collects both paths") {
  Graph g;
  Var x = g.leaf(Tensor({1}, {3.0f}), true);
  // x*x + x -> d/dx = 2x + 1 = 7
  Var y = add(g, mul(g, x, x), x);
  g.backward(sum_all(g, y));
  CHECK(g.grad(x)[0] == doctest::Approx(7.0f));
}

TEST_CASE("params bind once per graph") {
  Param p{"w", Tensor({2}, {1.0f, 2.0f}), true};
  Graph g;
  Var a = g.param(p);
  Var b = g.param(p);
  CHECK(a.idx == b.idx);

  // Two uses accumulate into one gradient.
  g.backward(sum_all(g, add(g, a, b)));
  CHECK(g.grad(a)[0] == 2.0f);
}

TEST_CASE("non-trainable params get no gradient") {
  Param p{"running_mean", Tensor({2}, {0.0f, 0.0f}), false};
  Graph g;
  Var v = g.param(p);
  CHECK_FALSE(g.needs_grad(v));
  g.backward(sum_all(g, add_const(g, v, 1.0f)));
  CHECK_FALSE(g.has_grad(v));
}

TEST_CASE("constants stay out of the backward sweep") {
  Graph g;
  Var c = g.leaf(Tensor({2}, {5.0f, 5.0f}), false);
  Var x = g.leaf(Tensor({2}, {1.0f, 2.0f}), true);
  Var y = mul(g, x, c);
  CHECK(g.needs_grad(y));
  g.backward(sum_all(g, y));
  CHECK_FALSE(g.has_grad(c));
  CHECK(g.grad(x)[0] == 5.0f);
}

TEST_CASE("backward requires a scalar") {
  Graph g;
  Var x = g.leaf(Tensor({2}, {1.0f, 2.0f}), true);
  CHECK_THROWS_AS(g.backward(x), ConfigError);
}

TEST_CASE("vars are bound to their graph") {
  Graph g1, g2;
  Var x = g1.leaf(Tensor({1}, {1.0f}), true);
  CHECK_THROWS_AS(g2.value(x), ConfigError);
  CHECK_THROWS_AS(add(g2, x, x), ConfigError);
  CHECK_THROWS_AS(g1.value(Var{}), ConfigError);
}

TEST_CASE("a non-recording graph runs forward only") {
  Graph g(false);
  CHECK_FALSE(g.recording());
  Var x = g.leaf(Tensor({2}, {1.0f, 2.0f}), true);
  Var y = mul(g, x, x);
  CHECK(g.value(y)[1] == 4.0f);
  CHECK_FALSE(g.needs_grad(y));
  CHECK_FALSE(g.tracks(y));
  CHECK_THROWS_AS(g.backward(sum_all(g, y)), ConfigError);
}

TEST_CASE("grad of an untouched leaf throws") {
  Graph g;
  Var x = g.leaf(Tensor({1}, {1.0f}), true);
  CHECK_THROWS_AS(g.grad(x), ConfigError);
}
