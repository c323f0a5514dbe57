#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "diffuma/ops.hpp"
#include "diffuma/random.hpp"

namespace diffuma {

/// Ordered, named collection of trainable leaves. Order is registration order and is what
/// checkpoints and the optimizer iterate over.
template <typename T>
class ParameterSet {
 public:
  Tensor<T> add(std::string name, Tensor<T> tensor) {
    for (const auto& [existing, _] : entries_)
      if (existing == name) throw ConfigError("duplicate parameter name '" + name + "'");
    tensor.set_requires_grad(true);
    entries_.emplace_back(std::move(name), tensor);
    return tensor;
  }

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  Tensor<T> get(const std::string& name) const {
    for (const auto& [n, t] : entries_)
      if (n == name) return t;
    throw ConfigError("unknown parameter '" + name + "'");
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from_data(std::move(shape), std::move(v));
}

template <typename T>
Tensor<T> normal_tensor(Shape shape, double stddev, Rng& rng) {
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(stddev * rng.normal());
  return Tensor<T>::from_data(std::move(shape), std::move(v));
}

/// Affine map over the last axis: weight [in, out], optional bias [out].
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  /// Fan-in scaled uniform weights, zero bias.
  static Linear make(ParameterSet<T>& params, const std::string& name, std::size_t in,
                     std::size_t out, Rng& rng, bool with_bias = true, double gain = 1.0) {
    Linear l;
    const double bound = gain / std::sqrt(static_cast<double>(std::max<std::size_t>(in, 1)));
    l.weight = params.add(name + ".weight", uniform_tensor<T>({in, out}, bound, rng));
    if (with_bias) l.bias = params.add(name + ".bias", Tensor<T>::zeros({out}));
    return l;
  }

  static Linear make_zero(ParameterSet<T>& params, const std::string& name, std::size_t in,
                          std::size_t out, bool with_bias = true) {
    Linear l;
    l.weight = params.add(name + ".weight", Tensor<T>::zeros({in, out}));
    if (with_bias) l.bias = params.add(name + ".bias", Tensor<T>::zeros({out}));
    return l;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

/// x [..., in] -> [..., out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
  if (x.ndim() == 0 || x.shape().back() != weight.dim(0)) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(weight.shape()));
  }
  const std::size_t in = weight.dim(0), out = weight.dim(1);
  const std::size_t rows = in == 0 ? 0 : x.numel() / in;
  auto y = matmul(reshape(x, {rows, in}), weight);
  if (bias.defined()) y = add(y, broadcast_to(reshape(bias, {1, out}), {rows, out}));
  Shape out_shape = x.shape();
  out_shape.back() = out;
  return reshape(y, std::move(out_shape));
}

/// Adds a per-channel bias [C] to a tensor laid out [B, C, ...].
template <typename T>
Tensor<T> add_channel_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  Shape bshape(x.ndim(), 1);
  bshape[1] = x.dim(1);
  return add(x, broadcast_to(reshape(bias, bshape), x.shape()));
}

}  // namespace diffuma
