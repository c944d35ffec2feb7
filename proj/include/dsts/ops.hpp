#pragma once

#include <vector>

#include "dsts/graph.hpp"

namespace dsts {

// Differentiable primitives. All take and return Vars on one graph; shape
// errors are ConfigError and include the offending dimensions. Backward
// closures accumulate (never overwrite) parent gradients.

// Elementwise, shapes must match exactly (no broadcasting).
Var add(Graph& g, Var a, Var b);
Var sub(Graph& g, Var a, Var b);
Var mul(Graph& g, Var a, Var b);
Var scale(Graph& g, Var a, float c);
Var add_const(Graph& g, Var a, float c);
// c - a, elementwise.
Var rsub_const(Graph& g, float c, Var a);
Var square(Graph& g, Var a);
Var exp(Graph& g, Var a);
Var tanh(Graph& g, Var a);
Var sigmoid(Graph& g, Var a);
Var leaky_relu(Graph& g, Var a, float slope = 0.2f);
Var clamp(Graph& g, Var a, float lo, float hi);

// Shape ops.
Var reshape(Graph& g, Var a, std::vector<int> shape);
// N x Ca x H x W ++ N x Cb x H x W -> N x (Ca+Cb) x H x W
Var concat_channels(Graph& g, Var a, Var b);
// N x C -> N x C x h x w (value repeated at every spatial site)
Var tile_spatial(Graph& g, Var a, int h, int w);
// N x C x H x W -> N x C
Var spatial_mean(Graph& g, Var a);

// Reductions to scalar (shape {1}).
Var sum_all(Graph& g, Var a);
Var mean_all(Graph& g, Var a);

// x: N x F, w: F x U, b: U  ->  N x U
Var fully_connected(Graph& g, Var x, Var w, Var b);

// x: N x C x H x W, w: O x C x K x K, b: O. Zero padding, square kernel.
// Output spatial extent: floor((H + 2*pad - K)/stride) + 1.
Var conv2d(Graph& g, Var x, Var w, Var b, int stride, int pad);

// Adjoint of conv2d with the same weight layout, w: O x I x K x K maps
// N x O x h x w -> N x I x H x W with H = (h-1)*stride - 2*pad + K.
Var conv_transpose2d(Graph& g, Var x, Var w, Var b, int stride, int pad);

// Per-channel batch norm over (N,H,W). Training mode normalizes by biased
// batch statistics and updates running stats in place (unbiased variance);
// eval mode normalizes by the running stats. Training requires N*H*W > 1.
Var batch_norm(Graph& g, Var x, Var gamma, Var beta, Tensor& running_mean, Tensor& running_var,
               bool training, float momentum = 0.1f, float eps = 1e-5f);

// mean over all elements of |a - b|.
Var mean_abs_diff(Graph& g, Var a, Var b);

// mean and logvar: N x D. Batch mean of the per-sample KL of a diagonal
// Gaussian against the standard normal:
//   (1/N) sum_n  -1/2 sum_d (1 + logvar - mean^2 - exp(logvar))
Var kl_gaussian(Graph& g, Var mean, Var logvar);

// logits: N x K; labels in [0, K). Batch-mean cross entropy with a
// numerically stable log-softmax.
Var softmax_cross_entropy(Graph& g, Var logits, const std::vector<int>& labels);

// mean + exp(0.5 * logvar) * eps, with eps an externally drawn N(0,1)
// tensor. Differentiable in mean and logvar; eps enters as a constant.
Var reparameterize(Graph& g, Var mean, Var logvar, Tensor eps);

// Non-graph helper shared by eval code: row-wise softmax of N x K.
Tensor softmax_rows(const Tensor& logits);

}  // namespace dsts
