#pragma once

#include <string>

#include "dsts/graph.hpp"

namespace dsts {

struct LossWeights {
  float lambda_l1 = 10.0f;     // cross reconstructions
  float lambda_l1_sh = 0.5f;   // shared-code alignment
  float lambda_kl = 0.01f;     // exclusive-code prior
};

// The adversarial term comes in two flavors. `paper` is the variant actually
// optimized here: the discriminator ascends
//     mean(D(real)^2) + mean((1 - D(fake))^2)
// while the other networks descend it. `canonical` negates the usual
// least-squares pair (D(real)-1)^2 + D(fake)^2 so that ascent by the
// discriminator matches the textbook objective; it exists as a config
// switch for comparison runs.
enum class GanForm { paper, canonical };

GanForm gan_form_from_string(const std::string& s);  // ConfigError on junk
std::string to_string(GanForm f);

// Scalar losses as graph ops. All return shape {1}.
Var shared_l1_loss(Graph& g, Var shared_x, Var shared_y);
Var reconstruction_l1(Graph& g, Var target, Var output);
Var kl_loss(Graph& g, Var mean, Var logvar);
Var lsgan_loss(Graph& g, Var d_real, Var d_fake, GanForm form = GanForm::paper);

struct ObjectiveParts {
  Var gan_x, gan_y;      // adversarial terms for each domain
  Var rec_xy, rec_yx;    // cross reconstructions
  Var kl_x, kl_y;
  Var shared_l1;
};

// gan_x + gan_y + l1*(rec_xy + rec_yx) + kl*(kl_x + kl_y) + l1_sh*shared_l1
Var total_objective(Graph& g, const ObjectiveParts& parts, const LossWeights& w);

// Per-iteration scalar record. `total` is the value of the combined
// objective; weighted_total recomputes it from the parts for consistency
// checks.
struct LossBreakdown {
  int64_t iter = 0;
  float gan_x = 0, gan_y = 0;
  float rec_xy = 0, rec_yx = 0;
  float kl_x = 0, kl_y = 0;
  float shared_l1 = 0;
  float total = 0;
  float lr = 0;

  float weighted_total(const LossWeights& w) const;
  static const char* csv_header();  // "iter,gan_x,...,total,lr"
  std::string csv_row() const;
  static LossBreakdown from_csv_row(const std::string& line);  // DataError on junk
};

// Value-level counterparts used by fixtures and reports (same math, run on
// a throwaway non-recording graph).
float shared_l1_value(const Tensor& a, const Tensor& b);
float kl_value(const Tensor& mean, const Tensor& logvar);
float lsgan_value(const Tensor& d_real, const Tensor& d_fake, GanForm form = GanForm::paper);

}  // namespace dsts
