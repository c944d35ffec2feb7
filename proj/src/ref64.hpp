#pragma once

#include "dsts/networks.hpp"
#include "dsts/objective.hpp"

namespace dsts {

// Double-precision re-evaluation of the training objective, written as naive
// loops with no graph, BLAS, or im2col in the path. Gradient checks need it:
// float central differences drown in rounding noise before the step gets
// small enough to dodge the L1 kinks, double ones do not.
double ref64_objective(const ModelParams& mp, const Tensor& x, const Tensor& y,
                       const Tensor& eps_x, const Tensor& eps_y, const LossWeights& w,
                       GanForm form);

}  // namespace dsts
