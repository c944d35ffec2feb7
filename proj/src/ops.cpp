#include "dsts/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "dsts/common.hpp"

namespace dsts {

namespace {

// C (m x n) = alpha * op(A) op(B) + beta * C, row-major.
void sgemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* A, const float* B,
           float beta, float* C) {
  runtime_init();
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n,
              k, alpha, A, ta ? m : k, B, tb ? k : n, beta, C, n);
}

void check_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ConfigError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

template <typename F>
Tensor map1(const Tensor& a, F fn) {
  Tensor y(a.shape());
  const float* pa = a.data();
  float* py = y.data();
  for (int64_t i = 0; i < a.numel(); ++i) py[i] = fn(pa[i]);
  return y;
}

// Unary op whose local derivative is a function of (input, output).
template <typename F, typename D>
Var unary(Graph& g, Var a, F fn, D dfn) {
  Var v = g.emit(map1(g.value(a), fn), {a});
  if (g.tracks(v))
    g.set_back(v, [a, v, dfn](Graph::Sweep& s, const Tensor& up) {
      if (!s.needs(a)) return;
      const Tensor& x = s.g.value(a);
      const Tensor& y = s.g.value(v);
      Tensor& ga = s.accum(a);
      for (int64_t i = 0; i < up.numel(); ++i) ga[i] += up[i] * dfn(x[i], y[i]);
    });
  return v;
}

struct ConvGeom {
  int n, c, h, w;       // input
  int o, k, stride, pad;
  int oh, ow;
  int64_t cols;         // n * oh * ow
  int rows;             // c * k * k
};

ConvGeom conv_geom(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
                   const char* op) {
  if (x.rank() != 4)
    throw ConfigError(std::string(op) + ": input must be N x C x H x W, got " + x.shape_str());
  if (w.rank() != 4 || w.dim(2) != w.dim(3))
    throw ConfigError(std::string(op) + ": weight must be O x C x K x K, got " + w.shape_str());
  if (stride < 1 || pad < 0)
    throw ConfigError(std::string(op) + ": invalid stride/pad " + std::to_string(stride) + "/" +
                      std::to_string(pad));
  ConvGeom gm;
  gm.n = x.dim(0);
  gm.c = x.dim(1);
  gm.h = x.dim(2);
  gm.w = x.dim(3);
  gm.o = w.dim(0);
  gm.k = w.dim(2);
  gm.stride = stride;
  gm.pad = pad;
  if (b.rank() != 1 || b.dim(0) != gm.o)
    throw ConfigError(std::string(op) + ": bias must have one value per output channel, got " +
                      b.shape_str() + " for " + std::to_string(gm.o) + " channels");
  return gm;
}

// Scratch for matrices that are fully overwritten before being read; skips
// the value-init pass a sized vector would pay, which shows up at these sizes.
std::unique_ptr<float[]> scratch(int64_t n) {
  return std::unique_ptr<float[]>(new float[static_cast<size_t>(n)]);
}

// col is (C*K*K) x (N*OH*OW), both row-major over those logical dims.
void im2col(const float* x, const ConvGeom& gm, float* col) {
  const int64_t plane = static_cast<int64_t>(gm.h) * gm.w;
  const int64_t ocols = static_cast<int64_t>(gm.oh) * gm.ow;
  for (int c = 0; c < gm.c; ++c)
    for (int ki = 0; ki < gm.k; ++ki)
      for (int kj = 0; kj < gm.k; ++kj) {
        float* dst = col + ((static_cast<int64_t>(c) * gm.k + ki) * gm.k + kj) * gm.cols;
        for (int n = 0; n < gm.n; ++n) {
          const float* src = x + (static_cast<int64_t>(n) * gm.c + c) * plane;
          float* drow = dst + n * ocols;
          for (int oh = 0; oh < gm.oh; ++oh) {
            int ih = oh * gm.stride + ki - gm.pad;
            if (ih < 0 || ih >= gm.h) {
              std::memset(drow + static_cast<int64_t>(oh) * gm.ow, 0, sizeof(float) * static_cast<size_t>(gm.ow));
              continue;
            }
            const float* srow = src + static_cast<int64_t>(ih) * gm.w;
            float* d = drow + static_cast<int64_t>(oh) * gm.ow;
            int iw0 = kj - gm.pad;
            for (int ow = 0; ow < gm.ow; ++ow) {
              int iw = ow * gm.stride + iw0;
              d[ow] = (iw >= 0 && iw < gm.w) ? srow[iw] : 0.0f;
            }
          }
        }
      }
}

// Adjoint scatter of im2col; accumulates into x.
void col2im(const float* col, const ConvGeom& gm, float* x) {
  const int64_t plane = static_cast<int64_t>(gm.h) * gm.w;
  const int64_t ocols = static_cast<int64_t>(gm.oh) * gm.ow;
  for (int c = 0; c < gm.c; ++c)
    for (int ki = 0; ki < gm.k; ++ki)
      for (int kj = 0; kj < gm.k; ++kj) {
        const float* src = col + ((static_cast<int64_t>(c) * gm.k + ki) * gm.k + kj) * gm.cols;
        for (int n = 0; n < gm.n; ++n) {
          float* dst = x + (static_cast<int64_t>(n) * gm.c + c) * plane;
          const float* srow0 = src + n * ocols;
          for (int oh = 0; oh < gm.oh; ++oh) {
            int ih = oh * gm.stride + ki - gm.pad;
            if (ih < 0 || ih >= gm.h) continue;
            float* drow = dst + static_cast<int64_t>(ih) * gm.w;
            const float* srow = srow0 + static_cast<int64_t>(oh) * gm.ow;
            int iw0 = kj - gm.pad;
            for (int ow = 0; ow < gm.ow; ++ow) {
              int iw = ow * gm.stride + iw0;
              if (iw >= 0 && iw < gm.w) drow[iw] += srow[ow];
            }
          }
        }
      }
}

// (N x O x OH x OW) <-> (O x N*OH*OW) transposition for the GEMM side.
void gather_channel_major(const float* y, int n, int o, int64_t spatial, float* mat) {
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < o; ++c)
      std::memcpy(mat + (static_cast<int64_t>(c) * n + i) * spatial,
                  y + (static_cast<int64_t>(i) * o + c) * spatial, sizeof(float) * static_cast<size_t>(spatial));
}

void scatter_channel_major(const float* mat, int n, int o, int64_t spatial, const float* bias,
                           float* y) {
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < o; ++c) {
      const float* src = mat + (static_cast<int64_t>(c) * n + i) * spatial;
      float* dst = y + (static_cast<int64_t>(i) * o + c) * spatial;
      if (bias) {
        float bv = bias[c];
        for (int64_t s = 0; s < spatial; ++s) dst[s] = src[s] + bv;
      } else {
        std::memcpy(dst, src, sizeof(float) * static_cast<size_t>(spatial));
      }
    }
}

}  // namespace

Var add(Graph& g, Var a, Var b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  check_same(ta, tb, "add");
  Tensor y(ta.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = ta[i] + tb[i];
  Var v = g.emit(std::move(y), {a, b});
  if (g.tracks(v))
    g.set_back(v, [a, b](Graph::Sweep& s, const Tensor& up) {
      for (Var p : {a, b}) {
        if (!s.needs(p)) continue;
        Tensor& gp = s.accum(p);
        for (int64_t i = 0; i < up.numel(); ++i) gp[i] += up[i];
      }
    });
  return v;
}

Var sub(Graph& g, Var a, Var b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  check_same(ta, tb, "sub");
  Tensor y(ta.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = ta[i] - tb[i];
  Var v = g.emit(std::move(y), {a, b});
  if (g.tracks(v))
    g.set_back(v, [a, b](Graph::Sweep& s, const Tensor& up) {
      if (s.needs(a)) {
        Tensor& ga = s.accum(a);
        for (int64_t i = 0; i < up.numel(); ++i) ga[i] += up[i];
      }
      if (s.needs(b)) {
        Tensor& gb = s.accum(b);
        for (int64_t i = 0; i < up.numel(); ++i) gb[i] -= up[i];
      }
    });
  return v;
}

Var mul(Graph& g, Var a, Var b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  check_same(ta, tb, "mul");
  Tensor y(ta.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = ta[i] * tb[i];
  Var v = g.emit(std::move(y), {a, b});
  if (g.tracks(v))
    g.set_back(v, [a, b](Graph::Sweep& s, const Tensor& up) {
      const Tensor& ta = s.g.value(a);
      const Tensor& tb = s.g.value(b);
      if (s.needs(a)) {
        Tensor& ga = s.accum(a);
        for (int64_t i = 0; i < up.numel(); ++i) ga[i] += up[i] * tb[i];
      }
      if (s.needs(b)) {
        Tensor& gb = s.accum(b);
        for (int64_t i = 0; i < up.numel(); ++i) gb[i] += up[i] * ta[i];
      }
    });
  return v;
}

Var scale(Graph& g, Var a, float c) {
  return unary(g, a, [c](float x) { return c * x; }, [c](float, float) { return c; });
}

Var add_const(Graph& g, Var a, float c) {
  return unary(g, a, [c](float x) { return x + c; }, [](float, float) { return 1.0f; });
}

Var rsub_const(Graph& g, float c, Var a) {
  return unary(g, a, [c](float x) { return c - x; }, [](float, float) { return -1.0f; });
}

Var square(Graph& g, Var a) {
  return unary(g, a, [](float x) { return x * x; }, [](float x, float) { return 2.0f * x; });
}

Var exp(Graph& g, Var a) {
  return unary(g, a, [](float x) { return std::exp(x); }, [](float, float y) { return y; });
}

Var tanh(Graph& g, Var a) {
  return unary(g, a, [](float x) { return std::tanh(x); },
               [](float, float y) { return 1.0f - y * y; });
}

Var sigmoid(Graph& g, Var a) {
  auto sg = [](float x) {
    return x >= 0.0f ? 1.0f / (1.0f + std::exp(-x)) : std::exp(x) / (1.0f + std::exp(x));
  };
  return unary(g, a, sg, [](float, float y) { return y * (1.0f - y); });
}

Var leaky_relu(Graph& g, Var a, float slope) {
  return unary(g, a, [slope](float x) { return x >= 0.0f ? x : slope * x; },
               [slope](float x, float) { return x >= 0.0f ? 1.0f : slope; });
}

Var clamp(Graph& g, Var a, float lo, float hi) {
  if (!(lo <= hi)) throw ConfigError("clamp: lo must not exceed hi");
  return unary(g, a, [lo, hi](float x) { return std::clamp(x, lo, hi); },
               [lo, hi](float x, float) { return (x >= lo && x <= hi) ? 1.0f : 0.0f; });
}

Var reshape(Graph& g, Var a, std::vector<int> shape) {
  const Tensor& ta = g.value(a);
  if (shape_numel(shape) != ta.numel())
    throw ConfigError("reshape: element count mismatch, " + ta.shape_str() + " cannot view as " +
                      Tensor(shape).shape_str());
  Tensor y(std::move(shape), std::vector<float>(ta.data(), ta.data() + ta.numel()));
  Var v = g.emit(std::move(y), {a});
  if (g.tracks(v))
    g.set_back(v, [a](Graph::Sweep& s, const Tensor& up) {
      if (!s.needs(a)) return;
      Tensor& ga = s.accum(a);
      for (int64_t i = 0; i < up.numel(); ++i) ga[i] += up[i];
    });
  return v;
}

Var concat_channels(Graph& g, Var a, Var b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  if (ta.rank() != 4 || tb.rank() != 4 || ta.dim(0) != tb.dim(0) || ta.dim(2) != tb.dim(2) ||
      ta.dim(3) != tb.dim(3))
    throw ConfigError("concat_channels: incompatible shapes " + ta.shape_str() + " vs " + tb.shape_str());
  int n = ta.dim(0), ca = ta.dim(1), cb = tb.dim(1), h = ta.dim(2), w = ta.dim(3);
  int64_t plane = static_cast<int64_t>(h) * w;
  Tensor y({n, ca + cb, h, w});
  for (int i = 0; i < n; ++i) {
    std::memcpy(y.data() + static_cast<int64_t>(i) * (ca + cb) * plane,
                ta.data() + static_cast<int64_t>(i) * ca * plane, sizeof(float) * static_cast<size_t>(ca * plane));
    std::memcpy(y.data() + (static_cast<int64_t>(i) * (ca + cb) + ca) * plane,
                tb.data() + static_cast<int64_t>(i) * cb * plane, sizeof(float) * static_cast<size_t>(cb * plane));
  }
  Var v = g.emit(std::move(y), {a, b});
  if (g.tracks(v))
    g.set_back(v, [a, b, n, ca, cb, plane](Graph::Sweep& s, const Tensor& up) {
      if (s.needs(a)) {
        Tensor& ga = s.accum(a);
        for (int i = 0; i < n; ++i) {
          const float* u = up.data() + static_cast<int64_t>(i) * (ca + cb) * plane;
          float* d = ga.data() + static_cast<int64_t>(i) * ca * plane;
          for (int64_t k = 0; k < ca * plane; ++k) d[k] += u[k];
        }
      }
      if (s.needs(b)) {
        Tensor& gb = s.accum(b);
        for (int i = 0; i < n; ++i) {
          const float* u = up.data() + (static_cast<int64_t>(i) * (ca + cb) + ca) * plane;
          float* d = gb.data() + static_cast<int64_t>(i) * cb * plane;
          for (int64_t k = 0; k < cb * plane; ++k) d[k] += u[k];
        }
      }
    });
  return v;
}

Var tile_spatial(Graph& g, Var a, int h, int w) {
  const Tensor& ta = g.value(a);
  if (ta.rank() != 2) throw ConfigError("tile_spatial expects N x C, got " + ta.shape_str());
  if (h < 1 || w < 1) throw ConfigError("tile_spatial: target extent must be positive");
  int n = ta.dim(0), c = ta.dim(1);
  Tensor y({n, c, h, w});
  int64_t plane = static_cast<int64_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      float v0 = ta[static_cast<int64_t>(i) * c + j];
      float* dst = y.data() + (static_cast<int64_t>(i) * c + j) * plane;
      for (int64_t s = 0; s < plane; ++s) dst[s] = v0;
    }
  Var v = g.emit(std::move(y), {a});
  if (g.tracks(v))
    g.set_back(v, [a, n, c, plane](Graph::Sweep& s, const Tensor& up) {
      if (!s.needs(a)) return;
      Tensor& ga = s.accum(a);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
          const float* u = up.data() + (static_cast<int64_t>(i) * c + j) * plane;
          double acc = 0.0;
          for (int64_t t = 0; t < plane; ++t) acc += u[t];
          ga[static_cast<int64_t>(i) * c + j] += static_cast<float>(acc);
        }
    });
  return v;
}

Var spatial_mean(Graph& g, Var a) {
  const Tensor& ta = g.value(a);
  if (ta.rank() != 4) throw ConfigError("spatial_mean expects N x C x H x W, got " + ta.shape_str());
  int n = ta.dim(0), c = ta.dim(1);
  int64_t plane = static_cast<int64_t>(ta.dim(2)) * ta.dim(3);
  Tensor y({n, c});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      const float* src = ta.data() + (static_cast<int64_t>(i) * c + j) * plane;
      double acc = 0.0;
      for (int64_t s = 0; s < plane; ++s) acc += src[s];
      y[static_cast<int64_t>(i) * c + j] = static_cast<float>(acc / static_cast<double>(plane));
    }
  Var v = g.emit(std::move(y), {a});
  if (g.tracks(v))
    g.set_back(v, [a, n, c, plane](Graph::Sweep& s, const Tensor& up) {
      if (!s.needs(a)) return;
      Tensor& ga = s.accum(a);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
          float u = up[static_cast<int64_t>(i) * c + j] / static_cast<float>(plane);
          float* d = ga.data() + (static_cast<int64_t>(i) * c + j) * plane;
          for (int64_t s2 = 0; s2 < plane; ++s2) d[s2] += u;
        }
    });
  return v;
}

Var sum_all(Graph& g, Var a) {
  const Tensor& ta = g.value(a);
  double acc = 0.0;
  for (int64_t i = 0; i < ta.numel(); ++i) acc += ta[i];
  Var v = g.emit(Tensor::scalar(static_cast<float>(acc)), {a});
  if (g.tracks(v))
    g.set_back(v, [a](Graph::Sweep& s, const Tensor& up) {
      if (!s.needs(a)) return;
      Tensor& ga = s.accum(a);
      float u = up[0];
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += u;
    });
  return v;
}

Var mean_all(Graph& g, Var a) {
  const Tensor& ta = g.value(a);
  double acc = 0.0;
  for (int64_t i = 0; i < ta.numel(); ++i) acc += ta[i];
  float inv = 1.0f / static_cast<float>(ta.numel());
  Var v = g.emit(Tensor::scalar(static_cast<float>(acc / static_cast<double>(ta.numel()))), {a});
  if (g.tracks(v))
    g.set_back(v, [a, inv](Graph::Sweep& s, const Tensor& up) {
      if (!s.needs(a)) return;
      Tensor& ga = s.accum(a);
      float u = up[0] * inv;
      for (int64_t i = 0; i < ga.numel(); ++i) ga[i] += u;
    });
  return v;
}

Var fully_connected(Graph& g, Var x, Var w, Var b) {
  const Tensor& tx = g.value(x);
  const Tensor& tw = g.value(w);
  const Tensor& tb = g.value(b);
  if (tx.rank() != 2 || tw.rank() != 2 || tx.dim(1) != tw.dim(0))
    throw ConfigError("fully_connected: x " + tx.shape_str() + " incompatible with w " + tw.shape_str());
  if (tb.rank() != 1 || tb.dim(0) != tw.dim(1))
    throw ConfigError("fully_connected: bias " + tb.shape_str() + " incompatible with w " + tw.shape_str());
  int n = tx.dim(0), f = tx.dim(1), u = tw.dim(1);
  Tensor y({n, u});
  for (int i = 0; i < n; ++i) std::memcpy(y.data() + static_cast<int64_t>(i) * u, tb.data(), sizeof(float) * static_cast<size_t>(u));
  sgemm(false, false, n, u, f, 1.0f, tx.data(), tw.data(), 1.0f, y.data());
  Var v = g.emit(std::move(y), {x, w, b});
  if (g.tracks(v))
    g.set_back(v, [x, w, b, n, f, u](Graph::Sweep& s, const Tensor& up) {
      const Tensor& tx = s.g.value(x);
      const Tensor& tw = s.g.value(w);
      if (s.needs(x)) sgemm(false, true, n, f, u, 1.0f, up.data(), tw.data(), 1.0f, s.accum(x).data());
      if (s.needs(w)) sgemm(true, false, f, u, n, 1.0f, tx.data(), up.data(), 1.0f, s.accum(w).data());
      if (s.needs(b)) {
        Tensor& gb = s.accum(b);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < u; ++j) gb[j] += up[static_cast<int64_t>(i) * u + j];
      }
    });
  return v;
}

Var conv2d(Graph& g, Var x, Var w, Var b, int stride, int pad) {
  ConvGeom gm = conv_geom(g.value(x), g.value(w), g.value(b), stride, pad, "conv2d");
  if (g.value(w).dim(1) != gm.c)
    throw ConfigError("conv2d: weight expects " + std::to_string(g.value(w).dim(1)) +
                      " input channels, input has " + std::to_string(gm.c));
  gm.oh = (gm.h + 2 * pad - gm.k) / stride + 1;
  gm.ow = (gm.w + 2 * pad - gm.k) / stride + 1;
  if (gm.h + 2 * pad < gm.k || gm.w + 2 * pad < gm.k)
    throw ConfigError("conv2d: kernel " + std::to_string(gm.k) + " exceeds padded input " +
                      g.value(x).shape_str());
  gm.rows = gm.c * gm.k * gm.k;
  gm.cols = static_cast<int64_t>(gm.n) * gm.oh * gm.ow;

  bool track = g.recording() && (g.needs_grad(x) || g.needs_grad(w) || g.needs_grad(b));
  // The forward column matrix is reused by the weight-gradient GEMM, so it
  // is kept alive by the closure when tracking.
  std::shared_ptr<float[]> col(scratch(gm.rows * gm.cols).release());
  im2col(g.value(x).data(), gm, col.get());

  int64_t ospatial = static_cast<int64_t>(gm.oh) * gm.ow;
  auto ymat = scratch(gm.o * gm.cols);
  sgemm(false, false, gm.o, static_cast<int>(gm.cols), gm.rows, 1.0f, g.value(w).data(), col.get(),
        0.0f, ymat.get());
  Tensor y({gm.n, gm.o, gm.oh, gm.ow});
  scatter_channel_major(ymat.get(), gm.n, gm.o, ospatial, g.value(b).data(), y.data());

  Var v = g.emit(std::move(y), {x, w, b});
  if (track)
    g.set_back(v, [x, w, b, gm, col, ospatial](Graph::Sweep& s, const Tensor& up) {
      auto dy = scratch(gm.o * gm.cols);
      gather_channel_major(up.data(), gm.n, gm.o, ospatial, dy.get());
      if (s.needs(w))
        sgemm(false, true, gm.o, gm.rows, static_cast<int>(gm.cols), 1.0f, dy.get(), col.get(),
              1.0f, s.accum(w).data());
      if (s.needs(b)) {
        Tensor& gb = s.accum(b);
        for (int o = 0; o < gm.o; ++o) {
          const float* row = dy.get() + static_cast<int64_t>(o) * gm.cols;
          double acc = 0.0;
          for (int64_t i = 0; i < gm.cols; ++i) acc += row[i];
          gb[o] += static_cast<float>(acc);
        }
      }
      if (s.needs(x)) {
        auto dcol = scratch(gm.rows * gm.cols);
        sgemm(true, false, gm.rows, static_cast<int>(gm.cols), gm.o, 1.0f, s.g.value(w).data(),
              dy.get(), 0.0f, dcol.get());
        col2im(dcol.get(), gm, s.accum(x).data());
      }
    });
  return v;
}

Var conv_transpose2d(Graph& g, Var x, Var w, Var b, int stride, int pad) {
  const Tensor& tx = g.value(x);
  const Tensor& tw = g.value(w);
  const Tensor& tb = g.value(b);
  if (tx.rank() != 4)
    throw ConfigError("conv_transpose2d: input must be N x O x h x w, got " + tx.shape_str());
  if (tw.rank() != 4 || tw.dim(2) != tw.dim(3))
    throw ConfigError("conv_transpose2d: weight must be O x I x K x K, got " + tw.shape_str());
  if (tx.dim(1) != tw.dim(0))
    throw ConfigError("conv_transpose2d: input channels " + std::to_string(tx.dim(1)) +
                      " do not match weight rows " + std::to_string(tw.dim(0)));
  if (stride < 1 || pad < 0) throw ConfigError("conv_transpose2d: invalid stride/pad");

  // Output geometry is the conv2d input geometry; gm describes that conv.
  ConvGeom gm;
  gm.n = tx.dim(0);
  gm.o = tx.dim(1);
  gm.oh = tx.dim(2);
  gm.ow = tx.dim(3);
  gm.c = tw.dim(1);
  gm.k = tw.dim(2);
  gm.stride = stride;
  gm.pad = pad;
  gm.h = (gm.oh - 1) * stride - 2 * pad + gm.k;
  gm.w = (gm.ow - 1) * stride - 2 * pad + gm.k;
  if (gm.h < 1 || gm.w < 1)
    throw ConfigError("conv_transpose2d: output would be empty for input " + tx.shape_str());
  if (tb.rank() != 1 || tb.dim(0) != gm.c)
    throw ConfigError("conv_transpose2d: bias " + tb.shape_str() + " incompatible with " +
                      std::to_string(gm.c) + " output channels");
  gm.rows = gm.c * gm.k * gm.k;
  gm.cols = static_cast<int64_t>(gm.n) * gm.oh * gm.ow;
  int64_t ispatial = static_cast<int64_t>(gm.oh) * gm.ow;

  auto xmat = scratch(gm.o * gm.cols);
  gather_channel_major(tx.data(), gm.n, gm.o, ispatial, xmat.get());
  auto colm = scratch(gm.rows * gm.cols);
  sgemm(true, false, gm.rows, static_cast<int>(gm.cols), gm.o, 1.0f, tw.data(), xmat.get(), 0.0f,
        colm.get());
  Tensor y({gm.n, gm.c, gm.h, gm.w});
  col2im(colm.get(), gm, y.data());
  {
    int64_t plane = static_cast<int64_t>(gm.h) * gm.w;
    for (int n = 0; n < gm.n; ++n)
      for (int c = 0; c < gm.c; ++c) {
        float bv = tb[c];
        float* dst = y.data() + (static_cast<int64_t>(n) * gm.c + c) * plane;
        for (int64_t s = 0; s < plane; ++s) dst[s] += bv;
      }
  }

  Var v = g.emit(std::move(y), {x, w, b});
  if (g.tracks(v))
    g.set_back(v, [x, w, b, gm, ispatial](Graph::Sweep& s, const Tensor& up) {
      // dcol serves both the input and the weight gradient.
      auto dcol = scratch(gm.rows * gm.cols);
      im2col(up.data(), gm, dcol.get());
      if (s.needs(x)) {
        auto dxmat = scratch(gm.o * gm.cols);
        sgemm(false, false, gm.o, static_cast<int>(gm.cols), gm.rows, 1.0f, s.g.value(w).data(),
              dcol.get(), 0.0f, dxmat.get());
        Tensor& gx = s.accum(x);
        auto tmp = scratch(gx.numel());
        scatter_channel_major(dxmat.get(), gm.n, gm.o, ispatial, nullptr, tmp.get());
        for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += tmp[i];
      }
      if (s.needs(w)) {
        const Tensor& tx = s.g.value(x);
        auto xmat = scratch(gm.o * gm.cols);
        gather_channel_major(tx.data(), gm.n, gm.o, ispatial, xmat.get());
        sgemm(false, true, gm.o, gm.rows, static_cast<int>(gm.cols), 1.0f, xmat.get(), dcol.get(),
              1.0f, s.accum(w).data());
      }
      if (s.needs(b)) {
        Tensor& gb = s.accum(b);
        int64_t plane = static_cast<int64_t>(gm.h) * gm.w;
        for (int n = 0; n < gm.n; ++n)
          for (int c = 0; c < gm.c; ++c) {
            const float* u = up.data() + (static_cast<int64_t>(n) * gm.c + c) * plane;
            double acc = 0.0;
            for (int64_t i = 0; i < plane; ++i) acc += u[i];
            gb[c] += static_cast<float>(acc);
          }
      }
    });
  return v;
}

Var batch_norm(Graph& g, Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
               bool training, float momentum, float eps) {
  const Tensor& tx = g.value(x);
  if (tx.rank() != 4) throw ConfigError("batch_norm expects N x C x H x W, got " + tx.shape_str());
  int n = tx.dim(0), c = tx.dim(1), h = tx.dim(2), w = tx.dim(3);
  const Tensor& tg = g.value(gamma);
  const Tensor& tbeta = g.value(beta);
  auto check_c = [c](const Tensor& t, const char* what) {
    if (t.rank() != 1 || t.dim(0) != c)
      throw ConfigError(std::string("batch_norm: ") + what + " must have shape {" +
                        std::to_string(c) + "}, got " + t.shape_str());
  };
  check_c(tg, "gamma");
  check_c(tbeta, "beta");
  check_c(running_mean, "running_mean");
  check_c(running_var, "running_var");
  int64_t m = static_cast<int64_t>(n) * h * w;
  if (training && m <= 1)
    throw ConfigError("batch_norm: training needs more than one value per channel, got N*H*W = " +
                      std::to_string(m));

  int64_t plane = static_cast<int64_t>(h) * w;
  std::vector<float> mean(static_cast<size_t>(c)), invstd(static_cast<size_t>(c));
  if (training) {
    for (int j = 0; j < c; ++j) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* src = tx.data() + (static_cast<int64_t>(i) * c + j) * plane;
        for (int64_t s = 0; s < plane; ++s) acc += src[s];
      }
      double mu = acc / static_cast<double>(m);
      double vacc = 0.0;
      for (int i = 0; i < n; ++i) {
        const float* src = tx.data() + (static_cast<int64_t>(i) * c + j) * plane;
        for (int64_t s = 0; s < plane; ++s) {
          double d = src[s] - mu;
          vacc += d * d;
        }
      }
      double var = vacc / static_cast<double>(m);  // biased, used for normalization
      mean[static_cast<size_t>(j)] = static_cast<float>(mu);
      invstd[static_cast<size_t>(j)] = static_cast<float>(1.0 / std::sqrt(var + eps));
      double unbiased = vacc / static_cast<double>(m - 1);
      running_mean[j] = (1.0f - momentum) * running_mean[j] + momentum * static_cast<float>(mu);
      running_var[j] = (1.0f - momentum) * running_var[j] + momentum * static_cast<float>(unbiased);
    }
  } else {
    for (int j = 0; j < c; ++j) {
      mean[static_cast<size_t>(j)] = running_mean[j];
      invstd[static_cast<size_t>(j)] = 1.0f / std::sqrt(running_var[j] + eps);
    }
  }

  Tensor y(tx.shape());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      const float* src = tx.data() + (static_cast<int64_t>(i) * c + j) * plane;
      float* dst = y.data() + (static_cast<int64_t>(i) * c + j) * plane;
      float mu = mean[static_cast<size_t>(j)], is = invstd[static_cast<size_t>(j)];
      float ga = tg[j], be = tbeta[j];
      for (int64_t s = 0; s < plane; ++s) dst[s] = (src[s] - mu) * is * ga + be;
    }

  Var v = g.emit(std::move(y), {x, gamma, beta});
  if (g.tracks(v))
    g.set_back(v, [x, gamma, beta, mean, invstd, n, c, plane, m, training](Graph::Sweep& s,
                                                                           const Tensor& up) {
      const Tensor& tx = s.g.value(x);
      const Tensor& tg = s.g.value(gamma);
      // Per-channel sums of dy and dy * xhat feed every gradient.
      std::vector<double> s1(static_cast<size_t>(c), 0.0), s2(static_cast<size_t>(c), 0.0);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
          const float* u = up.data() + (static_cast<int64_t>(i) * c + j) * plane;
          const float* xv = tx.data() + (static_cast<int64_t>(i) * c + j) * plane;
          float mu = mean[static_cast<size_t>(j)], is = invstd[static_cast<size_t>(j)];
          double a1 = 0.0, a2 = 0.0;
          for (int64_t t = 0; t < plane; ++t) {
            a1 += u[t];
            a2 += static_cast<double>(u[t]) * ((xv[t] - mu) * is);
          }
          s1[static_cast<size_t>(j)] += a1;
          s2[static_cast<size_t>(j)] += a2;
        }
      if (s.needs(beta)) {
        Tensor& gb = s.accum(beta);
        for (int j = 0; j < c; ++j) gb[j] += static_cast<float>(s1[static_cast<size_t>(j)]);
      }
      if (s.needs(gamma)) {
        Tensor& gg = s.accum(gamma);
        for (int j = 0; j < c; ++j) gg[j] += static_cast<float>(s2[static_cast<size_t>(j)]);
      }
      if (s.needs(x)) {
        Tensor& gx = s.accum(x);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < c; ++j) {
            const float* u = up.data() + (static_cast<int64_t>(i) * c + j) * plane;
            const float* xv = tx.data() + (static_cast<int64_t>(i) * c + j) * plane;
            float* d = gx.data() + (static_cast<int64_t>(i) * c + j) * plane;
            float mu = mean[static_cast<size_t>(j)], is = invstd[static_cast<size_t>(j)];
            float ga = tg[j];
            if (training) {
              float c1 = static_cast<float>(s1[static_cast<size_t>(j)] / static_cast<double>(m));
              float c2 = static_cast<float>(s2[static_cast<size_t>(j)] / static_cast<double>(m));
              for (int64_t t = 0; t < plane; ++t) {
                float xhat = (xv[t] - mu) * is;
                d[t] += ga * is * (u[t] - c1 - xhat * c2);
              }
            } else {
              // Running stats are constants in eval mode.
              for (int64_t t = 0; t < plane; ++t) d[t] += ga * is * u[t];
            }
          }
      }
    });
  return v;
}

Var mean_abs_diff(Graph& g, Var a, Var b) {
  const Tensor& ta = g.value(a);
  const Tensor& tb = g.value(b);
  check_same(ta, tb, "mean_abs_diff");
  double acc = 0.0;
  for (int64_t i = 0; i < ta.numel(); ++i) acc += std::fabs(static_cast<double>(ta[i]) - tb[i]);
  float inv = 1.0f / static_cast<float>(ta.numel());
  Var v = g.emit(Tensor::scalar(static_cast<float>(acc / static_cast<double>(ta.numel()))), {a, b});
  if (g.tracks(v))
    g.set_back(v, [a, b, inv](Graph::Sweep& s, const Tensor& up) {
      const Tensor& ta = s.g.value(a);
      const Tensor& tb = s.g.value(b);
      float u = up[0] * inv;
      // subgradient 0 at exact ties
      if (s.needs(a)) {
        Tensor& ga = s.accum(a);
        for (int64_t i = 0; i < ta.numel(); ++i) {
          float d = ta[i] - tb[i];
          ga[i] += u * (d > 0.0f ? 1.0f : d < 0.0f ? -1.0f : 0.0f);
        }
      }
      if (s.needs(b)) {
        Tensor& gb = s.accum(b);
        for (int64_t i = 0; i < ta.numel(); ++i) {
          float d = ta[i] - tb[i];
          gb[i] -= u * (d > 0.0f ? 1.0f : d < 0.0f ? -1.0f : 0.0f);
        }
      }
    });
  return v;
}

Var kl_gaussian(Graph& g, Var mean, Var logvar) {
  const Tensor& tm = g.value(mean);
  const Tensor& tl = g.value(logvar);
  check_same(tm, tl, "kl_gaussian");
  if (tm.rank() != 2) throw ConfigError("kl_gaussian expects N x D, got " + tm.shape_str());
  int n = tm.dim(0);
  double acc = 0.0;
  for (int64_t i = 0; i < tm.numel(); ++i)
    acc += 1.0 + tl[i] - static_cast<double>(tm[i]) * tm[i] - std::exp(static_cast<double>(tl[i]));
  float kl = static_cast<float>(-0.5 * acc / static_cast<double>(n));
  Var v = g.emit(Tensor::scalar(kl), {mean, logvar});
  if (g.tracks(v))
    g.set_back(v, [mean, logvar, n](Graph::Sweep& s, const Tensor& up) {
      const Tensor& tm = s.g.value(mean);
      const Tensor& tl = s.g.value(logvar);
      float u = up[0] / static_cast<float>(n);
      if (s.needs(mean)) {
        Tensor& gm = s.accum(mean);
        for (int64_t i = 0; i < tm.numel(); ++i) gm[i] += u * tm[i];
      }
      if (s.needs(logvar)) {
        Tensor& gl = s.accum(logvar);
        for (int64_t i = 0; i < tl.numel(); ++i) gl[i] += u * 0.5f * (std::exp(tl[i]) - 1.0f);
      }
    });
  return v;
}

Var softmax_cross_entropy(Graph& g, Var logits, const std::vector<int>& labels) {
  const Tensor& tl = g.value(logits);
  if (tl.rank() != 2) throw ConfigError("softmax_cross_entropy expects N x K, got " + tl.shape_str());
  int n = tl.dim(0), k = tl.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw ConfigError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                      std::to_string(n) + " rows");
  Tensor probs({n, k});
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    if (labels[static_cast<size_t>(i)] < 0 || labels[static_cast<size_t>(i)] >= k)
      throw ConfigError("softmax_cross_entropy: label " + std::to_string(labels[static_cast<size_t>(i)]) +
                        " outside [0," + std::to_string(k) + ")");
    const float* row = tl.data() + static_cast<int64_t>(i) * k;
    float* prow = probs.data() + static_cast<int64_t>(i) * k;
    float mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    double logz = std::log(z) + mx;
    for (int j = 0; j < k; ++j) prow[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - logz));
    loss += logz - row[labels[static_cast<size_t>(i)]];
  }
  Var v = g.emit(Tensor::scalar(static_cast<float>(loss / n)), {logits});
  if (g.tracks(v))
    g.set_back(v, [logits, labels, probs, n, k](Graph::Sweep& s, const Tensor& up) {
      if (!s.needs(logits)) return;
      Tensor& gl = s.accum(logits);
      float u = up[0] / static_cast<float>(n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
          float p = probs[static_cast<int64_t>(i) * k + j];
          float y = (labels[static_cast<size_t>(i)] == j) ? 1.0f : 0.0f;
          gl[static_cast<int64_t>(i) * k + j] += u * (p - y);
        }
    });
  return v;
}

Var reparameterize(Graph& g, Var mean, Var logvar, Tensor eps) {
  const Tensor& tm = g.value(mean);
  check_same(tm, g.value(logvar), "reparameterize");
  check_same(tm, eps, "reparameterize(eps)");
  Var noise = g.leaf(std::move(eps), false);
  Var sigma = exp(g, scale(g, logvar, 0.5f));
  return add(g, mean, mul(g, sigma, noise));
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw ConfigError("softmax_rows expects N x K, got " + logits.shape_str());
  int n = logits.dim(0), k = logits.dim(1);
  Tensor out({n, k});
  for (int i = 0; i < n; ++i) {
    const float* row = logits.data() + static_cast<int64_t>(i) * k;
    float* orow = out.data() + static_cast<int64_t>(i) * k;
    float mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int j = 0; j < k; ++j) z += std::exp(static_cast<double>(row[j]) - mx);
    for (int j = 0; j < k; ++j)
      orow[j] = static_cast<float>(std::exp(static_cast<double>(row[j]) - mx) / z);
  }
  return out;
}

}  // namespace dsts
