#pragma once

#include <functional>
#include <vector>

#include "spikereg/tensor.hpp"

namespace spikereg {

// Analytic gradient of f at x via one taped backward pass. f must be a
// deterministic scalar-valued function of its argument.
std::vector<double> analytic_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x);

// Central finite differences of f at x with step h, component by component.
std::vector<double> central_differences(const std::function<Tensor(const Tensor&)>& f,
                                        const Tensor& x, double h);

// max over components of |analytic - central difference| / max(1, |analytic|).
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double h = 1e-5);

}  // namespace spikereg
