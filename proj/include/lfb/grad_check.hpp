#pragma once

#include <functional>

#include "lfb/tensor.hpp"

namespace lfb {

/// Default relative-error bound for analytic-vs-numeric gradient agreement
/// (double precision, central differences).
inline constexpr double kGradCheckTol = 1e-4;

/// Central-difference gradient of a scalar-valued function, one coordinate at
/// a time: (f(x + h e_i) - f(x - h e_i)) / 2h. The probe points must evaluate
/// finite or the check is meaningless.
template <typename T>
TensorT<T> finite_diff_grad(const std::function<T(const TensorT<T>&)>& f,
                            const TensorT<T>& x, T h = T(1e-5)) {
  TensorT<T> grad(x.shape());
  TensorT<T> probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T orig = probe.at(i);
    probe.at(i) = orig + h;
    const T fp = f(probe);
    probe.at(i) = orig - h;
    const T fm = f(probe);
    probe.at(i) = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw ValueError("finite_diff_grad: non-finite probe evaluation");
    }
    grad.at(i) = (fp - fm) / (T(2) * h);
  }
  return grad;
}

/// max_i |a_i - n_i| / max(1, max_i |n_i|). The outer max(1, .) keeps the
/// metric meaningful when the true gradient is near zero.
template <typename T>
T gradient_rel_err(const TensorT<T>& analytic, const TensorT<T>& numeric) {
  const T denom = std::max(T(1), max_abs(numeric));
  return max_abs_diff(analytic, numeric) / denom;
}

}  // namespace lfb
