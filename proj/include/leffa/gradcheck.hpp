#pragma once

#include <functional>

#include "leffa/tensor.hpp"

namespace leffa {

// Central-difference check of an analytic gradient. f maps a tensor to a
// scalar; analytic_grad must have x's shape. Relative error per element uses
// max(|analytic|, |numeric|, 1e-8) as the denominator; returns the max.
template <typename T>
T finite_difference_check(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                          const Tensor<T>& analytic_grad, T step = T(1e-4)) {
  if (step <= T(0)) throw param_error("finite_difference_check step must be > 0");
  if (!analytic_grad.same_shape(x))
    throw dim_error("analytic gradient shape " + shape_str(analytic_grad.shape()) +
                    " does not match input " + shape_str(x.shape()));
  T worst = T(0);
  for (int64_t i = 0; i < x.numel(); ++i) {
    Tensor<T> xp = x.clone();
    Tensor<T> xm = x.clone();
    xp[i] += step;
    xm[i] -= step;
    const T fp = f(xp), fm = f(xm);
    if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm)))
      throw std::runtime_error("finite_difference_check: non-finite function value");
    const T num = (fp - fm) / (T(2) * step);
    const T ana = analytic_grad[i];
    const T denom = std::max<T>(std::max(std::abs(num), std::abs(ana)), T(1e-8));
    worst = std::max(worst, std::abs(num - ana) / denom);
  }
  return worst;
}

}  // namespace leffa
