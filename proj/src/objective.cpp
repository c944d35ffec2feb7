#include "dsts/objective.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>

#include "dsts/common.hpp"
#include "dsts/ops.hpp"

namespace dsts {

GanForm gan_form_from_string(const std::string& s) {
  if (s == "paper") return GanForm::paper;
  if (s == "canonical") return GanForm::canonical;
  throw ConfigError("unknown gan_form '" + s + "' (expected 'paper' or 'canonical')");
}

std::string to_string(GanForm f) { return f == GanForm::paper ? "paper" : "canonical"; }

Var shared_l1_loss(Graph& g, Var shared_x, Var shared_y) { return mean_abs_diff(g, shared_x, shared_y); }

Var reconstruction_l1(Graph& g, Var target, Var output) { return mean_abs_diff(g, target, output); }

Var kl_loss(Graph& g, Var mean, Var logvar) { return kl_gaussian(g, mean, logvar); }

Var lsgan_loss(Graph& g, Var d_real, Var d_fake, GanForm form) {
  const Tensor& tr = g.value(d_real);
  const Tensor& tf = g.value(d_fake);
  if (tr.rank() != 2 || tr.dim(1) != 1 || tf.rank() != 2 || tf.dim(1) != 1)
    throw ConfigError("lsgan_loss expects N x 1 scores, got " + tr.shape_str() + " and " +
                      tf.shape_str());
  if (form == GanForm::paper) {
    Var real_term = mean_all(g, square(g, d_real));
    Var fake_term = mean_all(g, square(g, rsub_const(g, 1.0f, d_fake)));
    return add(g, real_term, fake_term);
  }
  Var real_term = mean_all(g, square(g, add_const(g, d_real, -1.0f)));
  Var fake_term = mean_all(g, square(g, d_fake));
  return scale(g, add(g, real_term, fake_term), -1.0f);
}

Var total_objective(Graph& g, const ObjectiveParts& p, const LossWeights& w) {
  Var gan = add(g, p.gan_x, p.gan_y);
  Var rec = scale(g, add(g, p.rec_xy, p.rec_yx), w.lambda_l1);
  Var kl = scale(g, add(g, p.kl_x, p.kl_y), w.lambda_kl);
  Var sh = scale(g, p.shared_l1, w.lambda_l1_sh);
  return add(g, add(g, gan, rec), add(g, kl, sh));
}

float LossBreakdown::weighted_total(const LossWeights& w) const {
  return gan_x + gan_y + w.lambda_l1 * (rec_xy + rec_yx) + w.lambda_kl * (kl_x + kl_y) +
         w.lambda_l1_sh * shared_l1;
}

const char* LossBreakdown::csv_header() {
  return "iter,gan_x,gan_y,rec_xy,rec_yx,kl_x,kl_y,shared_l1,total,lr";
}

std::string LossBreakdown::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%" PRId64 ",%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", iter,
                gan_x, gan_y, rec_xy, rec_yx, kl_x, kl_y, shared_l1, total, lr);
  return buf;
}

LossBreakdown LossBreakdown::from_csv_row(const std::string& line) {
  LossBreakdown lb;
  int got = std::sscanf(line.c_str(), "%" SCNd64 ",%g,%g,%g,%g,%g,%g,%g,%g,%g", &lb.iter, &lb.gan_x,
                        &lb.gan_y, &lb.rec_xy, &lb.rec_yx, &lb.kl_x, &lb.kl_y, &lb.shared_l1,
                        &lb.total, &lb.lr);
  if (got != 10) throw DataError("malformed loss CSV row: " + line);
  return lb;
}

float shared_l1_value(const Tensor& a, const Tensor& b) {
  Graph g(false);
  return g.value(shared_l1_loss(g, g.leaf(a), g.leaf(b)))[0];
}

float kl_value(const Tensor& mean, const Tensor& logvar) {
  Graph g(false);
  return g.value(kl_loss(g, g.leaf(mean), g.leaf(logvar)))[0];
}

float lsgan_value(const Tensor& d_real, const Tensor& d_fake, GanForm form) {
  Graph g(false);
  return g.value(lsgan_loss(g, g.leaf(d_real), g.leaf(d_fake), form))[0];
}

}  // namespace dsts
