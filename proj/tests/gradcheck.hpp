#pragma once

#include "hpgan/ops.hpp"
#include "hpgan/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace hpgan::testing {

inline Tensor<double> random_tensor(Shape shape, RngStream& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.data[i] = scale * rng.normal();
  return t;
}

struct GradCheck {
  double max_rel_error = 0;  // max |analytic - numeric| over max(|analytic|, |numeric|)
  double max_abs_error = 0;
  double scale = 0;
};

using ScalarFn = std::function<ag::Variable<double>(const std::vector<ag::Variable<double>>&)>;

/// Central differences (step h) against one reverse sweep. `coords` limits the checked entries
/// of each input (empty = all).
inline GradCheck check_gradient(const ScalarFn& f, std::vector<Tensor<double>> inputs, double h = 1e-5,
                                Index max_coords = -1, std::uint64_t coord_seed = 0) {
  std::vector<ag::Variable<double>> vars;
  for (auto& t : inputs) vars.push_back(ag::parameter(t));
  ag::Variable<double> out = f(vars);
  ag::backward(out);

  GradCheck r;
  RngStream pick(coord_seed);
  std::vector<double> analytic, numeric;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Index n = inputs[k].size();
    std::vector<Index> coords;
    if (max_coords < 0 || max_coords >= n) {
      coords.resize(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
    } else {
      for (Index i = 0; i < max_coords; ++i) coords.push_back(static_cast<Index>(pick.below(static_cast<std::uint64_t>(n))));
    }
    for (Index i : coords) {
      auto eval = [&](double delta) {
        std::vector<ag::Variable<double>> shifted;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor<double> t = inputs[j];
          if (j == k) t.data[i] += delta;
          shifted.push_back(ag::constant(std::move(t)));
        }
        ag::NoGradGuard guard;
        return f(shifted).item();
      };
      numeric.push_back((eval(h) - eval(-h)) / (2 * h));
      analytic.push_back(vars[k].has_grad() ? vars[k].grad().data[i] : 0.0);
    }
  }
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    r.scale = std::max({r.scale, std::abs(analytic[i]), std::abs(numeric[i])});
    r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic[i] - numeric[i]));
  }
  r.max_rel_error = r.scale > 0 ? r.max_abs_error / r.scale : r.max_abs_error;
  return r;
}

}  // namespace hpgan::testing
