// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "entprop/tensor.hpp"

namespace entprop {

/// Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h, one coordinate at a time.
template <typename T>
Tensor<T> finite_diff_gradient(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T h) {
  require(h > T{0}, ErrorCode::InvalidArgument, "finite_diff_gradient: step must be positive");
  Tensor<T> grad(x.shape());
  Tensor<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe[i];
    probe[i] = orig + h;
    const T fp = f(probe);
    probe[i] = orig - h;
    const T fm = f(probe);
    probe[i] = orig;
    grad[i] = (fp - fm) / (T{2} * h);
  }
  return grad;
}

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor). The floor keeps near-zero
/// coordinates from dominating.
template <typename T>
T max_relative_error(const Tensor<T>& a, const Tensor<T>& b, T floor = T{1e-8}) {
  require(a.shape() == b.shape(), ErrorCode::Shape, "max_relative_error: shape mismatch");
  T worst{0};
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace entprop
