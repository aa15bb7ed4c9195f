#pragma once

#include <functional>

#include "rupp/autodiff.hpp"

namespace rupp {

// Builds a scalar on `tape` from the leaf `x`.
using ScalarOfInput = std::function<Variable<double>(Tape<double>& tape, const Variable<double>& x)>;
// Builds a scalar on `tape`; parameters are bound by the builder itself.
using ScalarBuilder = std::function<Variable<double>(Tape<double>& tape)>;

/// Compares the tape gradient of f at x against central differences
/// (f(x + eps e_i) - f(x - eps e_i)) / 2 eps, coordinate by coordinate.
/// Returns max_i |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// eps must lie in [1e-6, 1e-3].
double grad_check(const ScalarOfInput& f, const Tensor<double>& x, double eps = 1e-6);

/// Same comparison for a parameter tensor that f reads through Tape::parameter.
/// The parameter value is restored afterwards; its grad is left zeroed.
/// A nonzero max_coords probes that many evenly spaced coordinates instead of all.
double grad_check_parameter(const ScalarBuilder& f, Parameter<double>& param, double eps = 1e-6,
                            std::size_t max_coords = 0);

}  // namespace rupp
