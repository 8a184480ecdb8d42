#pragma once

#include "hpgan/autograd.hpp"
#include "hpgan/rng.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace hpgan {

template <typename Scalar>
struct NamedVariable {
  std::string name;
  ag::Variable<Scalar> var;
};

template <typename Scalar>
using VariableList = std::vector<NamedVariable<Scalar>>;

/// Uniform(-b, b) with b = gain * sqrt(3 / fan_in). Drawn in double so float and double
/// instantiations of a network carry the same weights.
inline Tensor<double> kaiming_uniform(Shape shape, Index fan_in, double gain, RngStream& rng) {
  Tensor<double> t(std::move(shape));
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  for (Index i = 0; i < t.size(); ++i) t.data[i] = rng.uniform(-bound, bound);
  return t;
}

inline Tensor<double> normal_init(Shape shape, double stddev, RngStream& rng) {
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.data[i] = stddev * rng.normal();
  return t;
}

inline constexpr double kLeakyGain = 1.4142135623730951;  // sqrt(2)

}  // namespace hpgan
