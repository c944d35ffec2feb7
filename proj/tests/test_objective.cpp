#include <cmath>
#include <vector>

#include "doctest.h"
#include "dsts/common.hpp"
#include "dsts/objective.hpp"
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

// Plain-loop references, double accumulation.
double l1_ref(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) acc += std::abs(static_cast<double>(a[i]) - b[i]);
  return acc / static_cast<double>(a.numel());
}

double kl_ref(const Tensor& mean, const Tensor& logvar) {
  int n = mean.dim(0), d = mean.dim(1);
  double acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      double m = mean[static_cast<int64_t>(i) * d + j];
      double lv = logvar[static_cast<int64_t>(i) * d + j];
      acc += -0.5 * (1.0 + lv - m * m - std::exp(lv));
    }
  return acc / n;
}

double lsgan_ref(const Tensor& dr, const Tensor& df, GanForm form) {
  double r = 0.0, f = 0.0;
  for (int64_t i = 0; i < dr.numel(); ++i) r += static_cast<double>(dr[i]) * dr[i];
  for (int64_t i = 0; i < df.numel(); ++i) {
    double v = 1.0 - df[i];
    f += form == GanForm::paper ? v * v : static_cast<double>(df[i]) * df[i];
  }
  r /= static_cast<double>(dr.numel());
  f /= static_cast<double>(df.numel());
  if (form == GanForm::paper) return r + f;
  // Canonical least squares, negated so the discriminator still ascends.
  double real_term = 0.0;
  for (int64_t i = 0; i < dr.numel(); ++i) {
    double v = dr[i] - 1.0;
    real_term += v * v;
  }
  return -(real_term / static_cast<double>(dr.numel()) + f);
}

}  // namespace

TEST_CASE("kl fixtures") {
  Tensor zeros({1, 64});
  Tensor ones = Tensor::full({1, 64}, 1.0f);
  CHECK(kl_value(zeros, zeros) == doctest::Approx(0.0f).epsilon(1e-5));
  CHECK(kl_value(ones, zeros) == doctest::Approx(32.0f).epsilon(1e-5));
  // logvar = 1 everywhere: -1/2 * 64 * (2 - e)
  Tensor lv1 = Tensor::full({1, 64}, 1.0f);
  CHECK(kl_value(zeros, lv1) == doctest::Approx(64.0f * (std::exp(1.0f) - 2.0f) / 2.0f).epsilon(1e-5));
  // Batch mean, not batch sum: repeating the row leaves the value.
  Tensor ones4 = Tensor::full({4, 64}, 1.0f);
  Tensor zeros4({4, 64});
  CHECK(kl_value(ones4, zeros4) == doctest::Approx(32.0f).epsilon(1e-5));
}

TEST_CASE("lsgan boundary fixtures") {
  Tensor one({2, 1}, {1.0f, 1.0f});
  Tensor zero({2, 1});
  Tensor half = Tensor::full({2, 1}, 0.5f);
  CHECK(lsgan_value(one, zero) == doctest::Approx(2.0f).epsilon(1e-5));
  CHECK(lsgan_value(half, half) == doctest::Approx(0.5f).epsilon(1e-5));
  CHECK(lsgan_value(zero, one) == doctest::Approx(0.0f).epsilon(1e-5));
}

TEST_CASE("canonical form fixtures") {
  Tensor one({2, 1}, {1.0f, 1.0f});
  Tensor zero({2, 1});
  CHECK(lsgan_value(one, zero, GanForm::canonical) == doctest::Approx(0.0f).epsilon(1e-5));
  CHECK(lsgan_value(zero, one, GanForm::canonical) == doctest::Approx(-2.0f).epsilon(1e-5));
}

TEST_CASE("total objective arithmetic fixture is 4.14") {
  // gan 1+1, rec 0.1+0.1 at weight 10, kl 2+2 at 0.01, shared 0.2 at 0.5:
  // 2 + 2 + 0.04 + 0.1 = 4.14
  Graph g(false);
  ObjectiveParts parts;
  parts.gan_x = g.leaf(Tensor::scalar(1.0f));
  parts.gan_y = g.leaf(Tensor::scalar(1.0f));
  parts.rec_xy = g.leaf(Tensor::scalar(0.1f));
  parts.rec_yx = g.leaf(Tensor::scalar(0.1f));
  parts.kl_x = g.leaf(Tensor::scalar(2.0f));
  parts.kl_y = g.leaf(Tensor::scalar(2.0f));
  parts.shared_l1 = g.leaf(Tensor::scalar(0.2f));
  LossWeights w;
  CHECK(w.lambda_l1 == 10.0f);
  CHECK(w.lambda_l1_sh == 0.5f);
  CHECK(w.lambda_kl == 0.01f);
  CHECK(g.value(total_objective(g, parts, w))[0] == doctest::Approx(4.14f).epsilon(1e-5));
}

TEST_CASE("graph losses match plain-loop references") {
  Tensor a = randn({3, 50}, 60);
  Tensor b = randn({3, 50}, 61);
  Graph g(false);
  CHECK(g.value(reconstruction_l1(g, g.leaf(a), g.leaf(b)))[0] ==
        doctest::Approx(l1_ref(a, b)).epsilon(1e-5));
  CHECK(g.value(shared_l1_loss(g, g.leaf(a), g.leaf(b)))[0] ==
        doctest::Approx(l1_ref(a, b)).epsilon(1e-5));
  CHECK(shared_l1_value(a, b) == doctest::Approx(l1_ref(a, b)).epsilon(1e-5));

  Tensor mean = randn({4, 16}, 62);
  Tensor logvar = randn({4, 16}, 63);
  CHECK(kl_value(mean, logvar) == doctest::Approx(kl_ref(mean, logvar)).epsilon(1e-4));
  Graph g2(false);
  CHECK(g2.value(kl_loss(g2, g2.leaf(mean), g2.leaf(logvar)))[0] ==
        doctest::Approx(kl_ref(mean, logvar)).epsilon(1e-4));

  // Discriminator outputs live in (0,1).
  Tensor dr({5, 1}), df({5, 1});
  Rng rng(64);
  for (int i = 0; i < 5; ++i) {
    dr[i] = rng.next_float();
    df[i] = rng.next_float();
  }
  for (GanForm form : {GanForm::paper, GanForm::canonical}) {
    CHECK(lsgan_value(dr, df, form) == doctest::Approx(lsgan_ref(dr, df, form)).epsilon(1e-5));
    Graph g3(false);
    CHECK(g3.value(lsgan_loss(g3, g3.leaf(dr), g3.leaf(df), form))[0] ==
          doctest::Approx(lsgan_ref(dr, df, form)).epsilon(1e-5));
  }
}

TEST_CASE("reconstruction l1 is symmetric") {
  Tensor a = randn({2, 3, 4, 4}, 65);
  Tensor b = randn({2, 3, 4, 4}, 66);
  Graph g(false);
  float ab = g.value(reconstruction_l1(g, g.leaf(a), g.leaf(b)))[0];
  float ba = g.value(reconstruction_l1(g, g.leaf(b), g.leaf(a)))[0];
  CHECK(ab == ba);
}

TEST_CASE("gan form strings") {
  CHECK(gan_form_from_string("paper") == GanForm::paper);
  CHECK(gan_form_from_string("canonical") == GanForm::canonical);
  CHECK(to_string(GanForm::paper) == "paper");
  CHECK(to_string(GanForm::canonical) == "canonical");
  CHECK_THROWS_AS(gan_form_from_string("wgan"), ConfigError);
}

TEST_CASE("loss breakdown csv round trips") {
  LossBreakdown lb;
  lb.iter = 123;
  lb.gan_x = 1.25f;
  lb.gan_y = 0.5f;
  lb.rec_xy = 0.0625f;
  lb.rec_yx = 0.03125f;
  lb.kl_x = 2.0f;
  lb.kl_y = 4.0f;
  lb.shared_l1 = 0.125f;
  lb.total = 3.5f;
  lb.lr = 2e-4f;
  LossBreakdown back = LossBreakdown::from_csv_row(lb.csv_row());
  CHECK(back.iter == lb.iter);
  CHECK(back.gan_x == lb.gan_x);
  CHECK(back.rec_yx == lb.rec_yx);
  CHECK(back.kl_y == lb.kl_y);
  CHECK(back.shared_l1 == lb.shared_l1);
  CHECK(back.total == lb.total);
  CHECK(back.lr == lb.lr);
  CHECK_THROWS_AS(LossBreakdown::from_csv_row("1,2,junk"), DataError);
}

TEST_CASE("weighted_total recomputes the objective") {
  LossBreakdown lb;
  lb.gan_x = 1.0f;
  lb.gan_y = 1.0f;
  lb.rec_xy = 0.1f;
  lb.rec_yx = 0.1f;
  lb.kl_x = 2.0f;
  lb.kl_y = 2.0f;
  lb.shared_l1 = 0.2f;
  LossWeights w;
  CHECK(lb.weighted_total(w) == doctest::Approx(4.14f).epsilon(1e-6));
}
