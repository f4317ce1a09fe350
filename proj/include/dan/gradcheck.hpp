#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "dan/tensor.hpp"

namespace dan {

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
template <typename T>
Tensor<T> FiniteDifferenceGradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                                   T step) {
  Tensor<T> grad(x.shape());
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T original = probe[i];
    probe[i] = original + step;
    const T plus = f(probe);
    probe[i] = original - step;
    const T minus = f(probe);
    probe[i] = original;
    Require(std::isfinite(plus) && std::isfinite(minus), ErrorKind::kNumeric,
            "non-finite evaluation in finite difference at coordinate " + std::to_string(i));
    grad[i] = (plus - minus) / (T(2) * step);
  }
  return grad;
}

// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor)
template <typename T>
double MaxRelativeError(const Tensor<T>& a, const Tensor<T>& b, double floor = 1e-6) {
  Require(a.shape() == b.shape(), ErrorKind::kDimension, "relative error shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double x = a[i];
    const double y = b[i];
    const double denom = std::max({std::abs(x), std::abs(y), floor});
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

}  // namespace dan
