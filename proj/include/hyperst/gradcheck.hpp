#pragma once

#include <functional>

#include "hyperst/tensor.hpp"

namespace hyperst {

/// Central differences (f(x+h·e_i) - f(x-h·e_i)) / 2h for every coordinate of x.
/// Throws NumericError if f returns a non-finite value.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

/// Per-entry error |a-n| / max(|a|, |n|, 1), maximised over the tensor.
/// Small gradients are compared absolutely, large ones relatively.
double max_relative_error(const Tensor& analytic, const Tensor& numeric);

}  // namespace hyperst
