#pragma once

#include <functional>
#include <span>
#include <vector>

#include "protoshot/tensor.hpp"

namespace protoshot {

template <typename Real>
using ScalarFunction = std::function<BasicTensor<Real>(const BasicTensor<Real>&)>;

/// Central differences of f around x, one coordinate at a time. The divisor is
/// the actually representable step (x+eps) - (x-eps) rather than 2*eps.
template <typename Real>
std::vector<double> numeric_gradient(const ScalarFunction<Real>& f, const BasicTensor<Real>& x,
                                     double eps);

/// max_i |analytic_i - numeric_i| / max(1, |numeric_i|)
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Compares the backward() gradient of f at x with central differences.
/// Throws NumericalError when f(x) is not finite, std::invalid_argument when
/// eps <= 0 or f is not scalar-valued.
template <typename Real>
double finite_diff_check(const ScalarFunction<Real>& f, const BasicTensor<Real>& x, double eps);

}  // namespace protoshot
