// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of tape gradients, 64-bit only.

#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "avp/tensor.hpp"

namespace avp {

/// Scalar-valued function of a parameter list. Must rebuild its graph on
/// every call (stochastic pieces reseed internally so repeated evaluations
/// agree).
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t compared = 0;
};

/// Compares every analytic gradient element against a central difference at
/// step h. Cost is two evaluations per element.
GradCheckReport check_gradients(const ScalarFn& f, const std::vector<Tensor>& point,
                                double h = 1e-3);

/// Directional variant for larger compositions: at the given point, compares
/// grad . v against (f(x + h v) - f(x - h v)) / 2h for `probes` random unit
/// directions v spanning all inputs.
GradCheckReport check_gradients_directional(const ScalarFn& f, const std::vector<Tensor>& point,
                                            std::size_t probes, std::uint64_t seed,
                                            double h = 1e-3);

}  // namespace avp
