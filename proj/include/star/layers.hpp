#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "star/rng.hpp"
#include "star/tensor.hpp"

namespace star {

// Parameter draws come from name-keyed substreams, so init values do not
// depend on registration order.  The default gain of sqrt(3) makes a uniform
// draw variance-preserving through a linear map (Var(w) = 1/fan_in); layers
// that follow a relu use sqrt(6) to compensate for the halved variance.
// Keeping activations near unit scale matters here because category scores
// are plain dot products of two learned embeddings: if both sides start tiny
// the score gradients are quadratically suppressed and training stalls.
inline constexpr double kLinearGain = 1.7320508075688772;  // sqrt(3)
inline constexpr double kReluGain = 2.449489742783178;     // sqrt(6)

template <typename T>
Tensor<T> init_uniform_fan_in(uint64_t seed, const std::string& name, Shape shape,
                              int64_t fan_in, double gain = kLinearGain) {
  SplitMix64 rng = substream(seed, "init:" + name);
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> data(static_cast<size_t>(numel_of(shape)));
  for (auto& v : data) v = static_cast<T>(bound * rng.symmetric());
  return Tensor<T>::from_data(std::move(shape), std::move(data));
}

// Prompts start near zero so early training matches the un-prompted model.
template <typename T>
Tensor<T> init_prompt(uint64_t seed, const std::string& name, Shape shape) {
  SplitMix64 rng = substream(seed, "init:" + name);
  std::vector<T> data(static_cast<size_t>(numel_of(shape)));
  for (auto& v : data) v = static_cast<T>(0.02 * rng.gaussian());
  return Tensor<T>::from_data(std::move(shape), std::move(data));
}

template <typename T>
struct Affine {
  Tensor<T> w;  // in x out
  Tensor<T> b;  // out

  static Affine create(ParameterStore<T>& store, uint64_t seed, const std::string& name,
                       int64_t in, int64_t out, double gain = kLinearGain) {
    Affine a;
    a.w = store.add(name + ".w", init_uniform_fan_in<T>(seed, name + ".w", {in, out}, in, gain));
    a.b = store.add(name + ".b", Tensor<T>::zeros({out}));
    return a;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(x, w), b); }
};

// Two affine layers with relu between; the projector/FFN shape used
// throughout both streams.
template <typename T>
struct Mlp2 {
  Affine<T> l1;
  Affine<T> l2;

  static Mlp2 create(ParameterStore<T>& store, uint64_t seed, const std::string& name,
                     int64_t in, int64_t hidden, int64_t out, double l1_gain = kLinearGain) {
    Mlp2 m;
    m.l1 = Affine<T>::create(store, seed, name + ".l1", in, hidden, l1_gain);
    m.l2 = Affine<T>::create(store, seed, name + ".l2", hidden, out, kReluGain);
    return m;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return l2(relu(l1(x))); }
};

}  // namespace star
