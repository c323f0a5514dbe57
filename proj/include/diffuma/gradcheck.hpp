#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "diffuma/tensor.hpp"

namespace diffuma {

using GradCheckFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Compares reverse-mode gradients of a scalar closure with central differences.
/// Returns max over checked coordinates of |analytic - numeric| / max(1, |analytic|).
/// `max_coords_per_input` > 0 checks an evenly strided subset of each input.
inline double check_gradients(const GradCheckFn& fn, std::vector<Tensor<double>> inputs,
                              double eps = 1e-4, std::size_t max_coords_per_input = 0) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) throw ConfigError("check_gradients: eps must be in [1e-6, 1e-3]");
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  const auto out = fn(inputs);
  if (out.numel() != 1) throw DimensionError("check_gradients: closure must return a scalar");
  if (!std::isfinite(out.item())) throw NumericalError("check_gradients: non-finite forward value");
  backward(out);

  auto eval = [&] {
    NoGradGuard guard;
    const double v = fn(inputs).item();
    if (!std::isfinite(v)) throw NumericalError("check_gradients: non-finite forward value");
    return v;
  };

  double worst = 0.0;
  for (auto& in : inputs) {
    std::vector<double> analytic(in.numel(), 0.0);
    if (in.has_grad()) std::copy(in.grad().begin(), in.grad().end(), analytic.begin());
    const std::size_t n = in.numel();
    const std::size_t step =
        (max_coords_per_input == 0 || n <= max_coords_per_input) ? 1 : n / max_coords_per_input;
    auto data = in.mutable_data();
    for (std::size_t i = 0; i < n; i += step) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double plus = eval();
      data[i] = saved - eps;
      const double minus = eval();
      data[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
    }
  }
  return worst;
}

}  // namespace diffuma
