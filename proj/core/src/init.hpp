#pragma once

#include <cmath>

#include "hybridnet/rng.hpp"
#include "hybridnet/tensor.hpp"

namespace hybridnet::init {

// Glorot-uniform for a [fan_in×fan_out] weight.
inline Tensor glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  Tensor t({fan_in, fan_out});
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& x : t.data()) x = rng.uniform(-a, a);
  return t;
}

inline Tensor uniform(Rng& rng, Shape shape, double a) {
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = rng.uniform(-a, a);
  return t;
}

inline Tensor normal(Rng& rng, Shape shape, double stddev) {
  Tensor t(std::move(shape));
  for (auto& x : t.data()) x = rng.normal(0.0, stddev);
  return t;
}

}  // namespace hybridnet::init
