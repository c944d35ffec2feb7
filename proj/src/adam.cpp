#include "dsts/adam.hpp"

#include <cmath>

#include "dsts/common.hpp"

namespace dsts {

AdamState AdamState::like(const Tensor& param, float beta1, float beta2, float eps) {
  AdamState st;
  st.m = Tensor::zeros(param.shape());
  st.v = Tensor::zeros(param.shape());
  st.beta1 = beta1;
  st.beta2 = beta2;
  st.eps = eps;
  return st;
}

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, float lr, float grad_scale) {
  if (!param.same_shape(grad) || !param.same_shape(state.m) || !param.same_shape(state.v))
    throw ConfigError("adam_step: shape mismatch, param " + param.shape_str() + " grad " +
                      grad.shape_str());
  if (!grad.all_finite()) throw NumericError("adam_step: non-finite gradient");

  state.step += 1;
  float b1 = state.beta1, b2 = state.beta2;
  float bc1 = 1.0f - std::pow(b1, static_cast<float>(state.step));
  float bc2 = 1.0f - std::pow(b2, static_cast<float>(state.step));
  for (int64_t i = 0; i < param.numel(); ++i) {
    float gi = grad[i] * grad_scale;
    state.m[i] = b1 * state.m[i] + (1.0f - b1) * gi;
    state.v[i] = b2 * state.v[i] + (1.0f - b2) * gi * gi;
    float mhat = state.m[i] / bc1;
    float vhat = state.v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

}  // namespace dsts
