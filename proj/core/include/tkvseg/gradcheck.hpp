#pragma once

#include <functional>

#include "tkvseg/autograd.hpp"

namespace tkvseg {

// Builds a scalar on `graph` from the leaf `x`.
using ScalarFunction = std::function<Var<double>(Graph<double>& graph, Var<double> x)>;

// Central-difference check of the recorded gradient of `f` at `point`. Returns the
// maximum over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
// or +infinity if any evaluation is non-finite.
double gradcheck(const ScalarFunction& f, const Tensor<double>& point, double step = 1e-6);

}  // namespace tkvseg
