#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dsts/rng.hpp"
#include "dsts/tensor.hpp"

namespace dsts {

// Central-difference gradient verification.
//
// A check owns a set of input tensors. `loss` rebuilds the computation from
// scratch on every call (the graph under test is constructed inside), so the
// analytic and numeric paths share no state.
struct GradCheck {
  // Returns (loss value, analytic gradients per input). Called once.
  using Analytic = std::function<float(const std::vector<Tensor>& inputs, std::vector<Tensor>& grads)>;
  // Returns loss value only. Called 2x per probed coordinate. Double so a
  // reference forward evaluated in double precision survives the return.
  using Forward = std::function<double(const std::vector<Tensor>& inputs)>;

  std::string name;
  std::vector<Tensor> inputs;
  Analytic analytic;
  Forward forward;
  float step = 1e-3f;
  // Pass when |analytic - numeric| <= abs_tol + rel_tol * max(|analytic|, |numeric|).
  float rel_tol = 1e-2f;
  float abs_tol = 1e-3f;
  // Coordinates probed per input tensor; all when the tensor is smaller.
  int max_coords = 24;
};

struct GradCheckResult {
  std::string name;
  bool pass = false;
  float worst_abs_err = 0.0f;
  float worst_rel_err = 0.0f;
  int coords_checked = 0;
  std::string detail;  // location and values of the worst coordinate
};

// Probes a deterministic pseudorandom subset of coordinates.
GradCheckResult run_gradcheck(const GradCheck& check, Rng& rng);

// Convenience used by both the unit tests and the CLI `gradcheck` command:
// runs the full primitive-op suite plus a composed micro objective; returns
// per-check results. All deterministic in `seed`.
std::vector<GradCheckResult> gradcheck_suite(uint64_t seed);

}  // namespace dsts
