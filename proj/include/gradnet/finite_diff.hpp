#pragma once

#include <functional>

#include "gradnet/tensor.hpp"

namespace gradnet {

/// Central-difference gradient of a scalar function:
/// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every element i.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps = 1e-5);

/// Largest elementwise |a - b| / max(|a|, |b|, floor). The floor keeps
/// near-zero entries from turning round-off into huge relative errors.
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-3);

}  // namespace gradnet
