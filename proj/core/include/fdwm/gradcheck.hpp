#pragma once

#include <functional>

#include "fdwm/tape.hpp"

namespace fdwm {

// Scalar-valued tape function of a single input tensor.
using TapeFn = std::function<Tape<double>::Id(Tape<double>&, Tape<double>::Id)>;

// Central finite differences against the tape's analytic gradient. Returns
// max over coordinates of |analytic - numeric| / max(1, |analytic|).
// max_coords < 0 checks every coordinate; otherwise a seeded subset.
double grad_check(const TapeFn& fn, const Tensor<double>& point, double eps,
                  int max_coords = -1, uint64_t seed = 0);

}  // namespace fdwm
