#pragma once

#include <cstdint>

#include "dsts/tensor.hpp"

namespace dsts {

// Per-parameter Adam buffers. Moments persist across checkpoints so resumed
// training continues the exact trajectory.
struct AdamState {
  Tensor m, v;
  int64_t step = 0;
  float beta1 = 0.5f;
  float beta2 = 0.999f;
  float eps = 1e-8f;

  static AdamState like(const Tensor& param, float beta1, float beta2, float eps);
};

// One bias-corrected Adam update, in place. `grad_scale` premultiplies the
// gradient; the discriminator ascends by passing -1. Throws NumericError on
// a non-finite gradient before touching the parameter.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, float lr,
               float grad_scale = 1.0f);

}  // namespace dsts
