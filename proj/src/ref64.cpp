#include "ref64.hpp"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dsts/common.hpp"

namespace dsts {
namespace {

// Plain NCHW double buffer; N x C tensors use h = w = 1.
struct Arr {
  int n, c, h, w;
  std::vector<double> v;
  Arr(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0) {}
  double& at(int i, int j, int p, int q) {
    return v[((static_cast<int64_t>(i) * c + j) * h + p) * w + q];
  }
  double at(int i, int j, int p, int q) const {
    return v[((static_cast<int64_t>(i) * c + j) * h + p) * w + q];
  }
};

Arr from_image(const Tensor& t) {
  if (t.rank() != 4) throw ConfigError("ref64: expected N x C x H x W, got " + t.shape_str());
  Arr a(t.dim(0), t.dim(1), t.dim(2), t.dim(3));
  for (int64_t i = 0; i < t.numel(); ++i) a.v[static_cast<size_t>(i)] = t[i];
  return a;
}

Arr conv2d(const Arr& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  int o = w.dim(0), k = w.dim(2);
  Arr y(x.n, o, (x.h + 2 * pad - k) / stride + 1, (x.w + 2 * pad - k) / stride + 1);
  for (int i = 0; i < y.n; ++i)
    for (int oc = 0; oc < o; ++oc)
      for (int p = 0; p < y.h; ++p)
        for (int q = 0; q < y.w; ++q) {
          double acc = b[oc];
          for (int c = 0; c < x.c; ++c)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                int sp = p * stride - pad + ki, sq = q * stride - pad + kj;
                if (sp < 0 || sp >= x.h || sq < 0 || sq >= x.w) continue;
                acc += x.at(i, c, sp, sq) *
                       static_cast<double>(w[((static_cast<int64_t>(oc) * x.c + c) * k + ki) * k + kj]);
              }
          y.at(i, oc, p, q) = acc;
        }
  return y;
}

// Weight is (in, out, k, k); output positions are scattered from input taps.
Arr conv_transpose2d(const Arr& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  int o = w.dim(1), k = w.dim(2);
  Arr y(x.n, o, (x.h - 1) * stride - 2 * pad + k, (x.w - 1) * stride - 2 * pad + k);
  for (int i = 0; i < y.n; ++i)
    for (int oc = 0; oc < o; ++oc)
      for (int p = 0; p < y.h; ++p)
        for (int q = 0; q < y.w; ++q) y.at(i, oc, p, q) = b[oc];
  for (int i = 0; i < x.n; ++i)
    for (int ic = 0; ic < x.c; ++ic)
      for (int p = 0; p < x.h; ++p)
        for (int q = 0; q < x.w; ++q) {
          double xv = x.at(i, ic, p, q);
          for (int oc = 0; oc < o; ++oc)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                int dp = p * stride - pad + ki, dq = q * stride - pad + kj;
                if (dp < 0 || dp >= y.h || dq < 0 || dq >= y.w) continue;
                y.at(i, oc, dp, dq) +=
                    xv * static_cast<double>(w[((static_cast<int64_t>(ic) * o + oc) * k + ki) * k + kj]);
              }
        }
  return y;
}

// Training-mode normalization: batch statistics, biased variance.
Arr batch_norm(const Arr& x, const Tensor& gamma, const Tensor& beta) {
  int64_t m = static_cast<int64_t>(x.n) * x.h * x.w;
  Arr y(x.n, x.c, x.h, x.w);
  for (int j = 0; j < x.c; ++j) {
    double acc = 0.0;
    for (int i = 0; i < x.n; ++i)
      for (int p = 0; p < x.h; ++p)
        for (int q = 0; q < x.w; ++q) acc += x.at(i, j, p, q);
    double mu = acc / static_cast<double>(m);
    double vacc = 0.0;
    for (int i = 0; i < x.n; ++i)
      for (int p = 0; p < x.h; ++p)
        for (int q = 0; q < x.w; ++q) {
          double d = x.at(i, j, p, q) - mu;
          vacc += d * d;
        }
    double is = 1.0 / std::sqrt(vacc / static_cast<double>(m) + 1e-5);
    for (int i = 0; i < x.n; ++i)
      for (int p = 0; p < x.h; ++p)
        for (int q = 0; q < x.w; ++q)
          y.at(i, j, p, q) = (x.at(i, j, p, q) - mu) * is * gamma[j] + beta[j];
  }
  return y;
}

Arr lrelu(Arr a) {
  for (double& d : a.v) d = d >= 0.0 ? d : 0.2 * d;
  return a;
}

Arr fully_connected(const Arr& x, const Tensor& w, const Tensor& b) {
  int f = x.c, u = w.dim(1);
  Arr y(x.n, u, 1, 1);
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < u; ++j) {
      double acc = b[j];
      for (int t = 0; t < f; ++t)
        acc += x.at(i, t, 0, 0) * static_cast<double>(w[static_cast<int64_t>(t) * u + j]);
      y.at(i, j, 0, 0) = acc;
    }
  return y;
}

const Tensor& pv(const ParamGroup& gp, const std::string& name) { return gp.at(name).value; }

Arr conv_fwd(const ParamGroup& gp, const std::string& name, const Arr& x, int stride, int pad) {
  return conv2d(x, pv(gp, name + ".weight"), pv(gp, name + ".bias"), stride, pad);
}

Arr tconv_fwd(const ParamGroup& gp, const std::string& name, const Arr& x, int stride, int pad) {
  return conv_transpose2d(x, pv(gp, name + ".weight"), pv(gp, name + ".bias"), stride, pad);
}

Arr bn_fwd(const ParamGroup& gp, const std::string& name, const Arr& x) {
  return batch_norm(x, pv(gp, name + ".gamma"), pv(gp, name + ".beta"));
}

Arr encode_shared(const ModelParams& mp, const Arr& x) {
  const ParamGroup& gp = mp.shared_encoder;
  Arr h = lrelu(conv_fwd(gp, "conv0", x, 2, 1));
  for (size_t i = 1; i < mp.arch.shared_widths.size(); ++i) {
    std::string idx = std::to_string(i);
    h = lrelu(bn_fwd(gp, "bn" + idx, conv_fwd(gp, "conv" + idx, h, 2, 1)));
  }
  std::string last = std::to_string(mp.arch.shared_widths.size());
  return lrelu(bn_fwd(gp, "bn" + last, conv_fwd(gp, "conv" + last, h, 1, 1)));
}

struct ExCode {
  Arr mean, logvar, sample;
};

ExCode encode_exclusive(const ModelParams& mp, const Arr& x, const Tensor& eps) {
  const ParamGroup& gp = mp.exclusive_encoder;
  Arr h = lrelu(conv_fwd(gp, "stem", x, 2, 1));
  for (size_t i = 0; i < mp.arch.exclusive_blocks.size(); ++i) {
    std::string b = "res" + std::to_string(i);
    Arr main = lrelu(bn_fwd(gp, b + ".bn1", conv_fwd(gp, b + ".conv1", h, 2, 1)));
    main = bn_fwd(gp, b + ".bn2", conv_fwd(gp, b + ".conv2", main, 1, 1));
    Arr skip = bn_fwd(gp, b + ".bnskip", conv_fwd(gp, b + ".skip", h, 2, 0));
    for (size_t t = 0; t < main.v.size(); ++t) main.v[t] += skip.v[t];
    h = lrelu(std::move(main));
  }
  Arr flat(h.n, mp.arch.exclusive_flat(), 1, 1);
  flat.v = std::move(h.v);
  ExCode code{fully_connected(flat, pv(gp, "fc_mean.weight"), pv(gp, "fc_mean.bias")),
              fully_connected(flat, pv(gp, "fc_logvar.weight"), pv(gp, "fc_logvar.bias")),
              Arr(flat.n, mp.arch.latent_dim, 1, 1)};
  for (double& d : code.logvar.v) d = std::clamp(d, -10.0, 10.0);
  for (size_t t = 0; t < code.sample.v.size(); ++t)
    code.sample.v[t] = code.mean.v[t] +
                       std::exp(0.5 * code.logvar.v[t]) * static_cast<double>(eps[static_cast<int64_t>(t)]);
  return code;
}

Arr decode(const ModelParams& mp, const Arr& shared, const Arr& exclusive) {
  const ParamGroup& gp = mp.decoder;
  int s = shared.h;
  Arr h(shared.n, shared.c + exclusive.c, s, s);
  for (int i = 0; i < h.n; ++i)
    for (int j = 0; j < h.c; ++j)
      for (int p = 0; p < s; ++p)
        for (int q = 0; q < s; ++q)
          h.at(i, j, p, q) =
              j < shared.c ? shared.at(i, j, p, q) : exclusive.at(i, j - shared.c, 0, 0);
  for (size_t i = 0; i < mp.arch.decoder_widths.size(); ++i) {
    std::string idx = std::to_string(i);
    h = lrelu(bn_fwd(gp, "bn" + idx, tconv_fwd(gp, "tconv" + idx, h, 2, 1)));
  }
  Arr out = tconv_fwd(gp, "tconv_out", h, 2, 1);
  for (double& d : out.v) d = std::tanh(d);
  return out;
}

std::vector<double> discriminate(const ModelParams& mp, const Arr& x) {
  const ParamGroup& gp = mp.discriminator;
  Arr h = lrelu(conv_fwd(gp, "conv0", x, 2, 1));
  for (size_t i = 1; i < mp.arch.disc_widths.size(); ++i) {
    std::string idx = std::to_string(i);
    h = lrelu(bn_fwd(gp, "bn" + idx, conv_fwd(gp, "conv" + idx, h, 2, 1)));
  }
  Arr logits = conv_fwd(gp, "head", h, 1, 0);
  std::vector<double> score(static_cast<size_t>(logits.n));
  int64_t plane = static_cast<int64_t>(logits.h) * logits.w;
  for (int i = 0; i < logits.n; ++i) {
    double acc = 0.0;
    for (int p = 0; p < logits.h; ++p)
      for (int q = 0; q < logits.w; ++q) acc += logits.at(i, 0, p, q);
    double z = acc / static_cast<double>(plane);
    score[static_cast<size_t>(i)] =
        z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
  }
  return score;
}

double mean_abs_diff(const Arr& a, const Arr& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) acc += std::fabs(a.v[i] - b.v[i]);
  return acc / static_cast<double>(a.v.size());
}

double kl_gaussian(const ExCode& code) {
  double acc = 0.0;
  for (size_t i = 0; i < code.mean.v.size(); ++i) {
    double m = code.mean.v[i], lv = code.logvar.v[i];
    acc += 1.0 + lv - m * m - std::exp(lv);
  }
  return -0.5 * acc / static_cast<double>(code.mean.n);
}

double lsgan(const std::vector<double>& d_real, const std::vector<double>& d_fake, GanForm form) {
  double real = 0.0, fake = 0.0;
  for (double d : d_real) real += form == GanForm::paper ? d * d : (d - 1.0) * (d - 1.0);
  for (double d : d_fake) fake += form == GanForm::paper ? (1.0 - d) * (1.0 - d) : d * d;
  double value = real / static_cast<double>(d_real.size()) + fake / static_cast<double>(d_fake.size());
  return form == GanForm::paper ? value : -value;
}

}  // namespace

double ref64_objective(const ModelParams& mp, const Tensor& x, const Tensor& y,
                       const Tensor& eps_x, const Tensor& eps_y, const LossWeights& w,
                       GanForm form) {
  Arr ax = from_image(x), ay = from_image(y);
  Arr sh_x = encode_shared(mp, ax);
  Arr sh_y = encode_shared(mp, ay);
  ExCode ex_x = encode_exclusive(mp, ax, eps_x);
  ExCode ex_y = encode_exclusive(mp, ay, eps_y);
  Arr fake_x = decode(mp, sh_y, ex_x.sample);
  Arr fake_y = decode(mp, sh_x, ex_y.sample);

  double gan_x = lsgan(discriminate(mp, ax), discriminate(mp, fake_x), form);
  double gan_y = lsgan(discriminate(mp, ay), discriminate(mp, fake_y), form);
  double rec = mean_abs_diff(ax, fake_x) + mean_abs_diff(ay, fake_y);
  double kl = kl_gaussian(ex_x) + kl_gaussian(ex_y);
  double sh = mean_abs_diff(sh_x, sh_y);
  return gan_x + gan_y + static_cast<double>(w.lambda_l1) * rec +
         static_cast<double>(w.lambda_kl) * kl + static_cast<double>(w.lambda_l1_sh) * sh;
}

}  // namespace dsts
