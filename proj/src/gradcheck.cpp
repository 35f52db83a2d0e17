#include "protoshot/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "protoshot/errors.hpp"

namespace protoshot {

namespace {

template <typename Real>
double evaluate(const ScalarFunction<Real>& f, const BasicTensor<Real>& x) {
  const BasicTensor<Real> out = f(x);
  if (!out.defined() || out.size() != 1) {
    throw std::invalid_argument("finite_diff_check: function must return a scalar");
  }
  const double value = static_cast<double>(out.item());
  if (!std::isfinite(value)) throw NumericalError("finite_diff_check: f(x) is not finite");
  return value;
}

}  // namespace

template <typename Real>
std::vector<double> numeric_gradient(const ScalarFunction<Real>& f, const BasicTensor<Real>& x,
                                     double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  NoGradGuard no_grad;
  BasicTensor<Real> probe = x.detach();
  auto values = probe.mutable_values();
  std::vector<double> result(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real original = values[i];
    const Real up = static_cast<Real>(static_cast<double>(original) + eps);
    const Real down = static_cast<Real>(static_cast<double>(original) - eps);
    values[i] = up;
    const double f_up = evaluate(f, probe);
    values[i] = down;
    const double f_down = evaluate(f, probe);
    values[i] = original;
    result[i] = (f_up - f_down) / (static_cast<double>(up) - static_cast<double>(down));
  }
  return result;
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) {
    throw std::invalid_argument("max_relative_error: length mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]) / std::max(1.0, std::abs(numeric[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

template <typename Real>
double finite_diff_check(const ScalarFunction<Real>& f, const BasicTensor<Real>& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  BasicTensor<Real> probe(x.shape(), std::vector<Real>(x.values().begin(), x.values().end()), true);
  const BasicTensor<Real> loss = f(probe);
  if (!loss.defined() || loss.size() != 1) {
    throw std::invalid_argument("finite_diff_check: function must return a scalar");
  }
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    throw NumericalError("finite_diff_check: f(x) is not finite");
  }
  backward(loss);
  std::vector<double> analytic(probe.grad().begin(), probe.grad().end());
  const std::vector<double> numeric = numeric_gradient(f, probe, eps);
  return max_relative_error(analytic, numeric);
}

template std::vector<double> numeric_gradient<float>(const ScalarFunction<float>&,
                                                     const BasicTensor<float>&, double);
template std::vector<double> numeric_gradient<double>(const ScalarFunction<double>&,
                                                      const BasicTensor<double>&, double);
template double finite_diff_check<float>(const ScalarFunction<float>&, const BasicTensor<float>&,
                                         double);
template double finite_diff_check<double>(const ScalarFunction<double>&,
                                          const BasicTensor<double>&, double);

}  // namespace protoshot
