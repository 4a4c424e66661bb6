#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mpn/grad_check.hpp"
#include "mpn/rng.hpp"
#include "mpn/tensor.hpp"

namespace mpn {

// Parameter registry shared by the optimizer, serialization, and grad checks.
// Collection order is deterministic and defines the on-disk layout.
template <class S>
using ParamList = std::vector<NamedTensor<S>>;

// Glorot-uniform init. Draws go through double so the float and double
// parameterizations of the same seed coincide (up to rounding).
template <class S>
Tensor<S> glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<S> v(fan_in * fan_out);
  for (auto& x : v) x = static_cast<S>(rng.uniform(-limit, limit));
  auto t = Tensor<S>::from({fan_in, fan_out}, std::move(v));
  t.set_requires_grad(true);
  return t;
}

template <class S>
Tensor<S> zeros_param(Shape shape) {
  auto t = Tensor<S>::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

template <class S>
Tensor<S> ones_param(Shape shape) {
  auto t = Tensor<S>::constant(std::move(shape), S(1));
  t.set_requires_grad(true);
  return t;
}

template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  return add_rowvec(matmul(x, w), b);
}

// Affine pair used everywhere a learned projection appears.
template <class S>
struct Affine {
  Tensor<S> w, b;

  void init(Rng& rng, std::size_t in, std::size_t out) {
    w = glorot<S>(rng, in, out);
    b = zeros_param<S>({out});
  }
  Tensor<S> operator()(const Tensor<S>& x) const { return linear(x, w, b); }
  void collect(const std::string& prefix, ParamList<S>& out) const {
    out.push_back({prefix + ".w", w});
    out.push_back({prefix + ".b", b});
  }
};

}  // namespace mpn
