#pragma once

#include "gabvit/rng.hpp"
#include "gabvit/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <string_view>

namespace gabvit::detail {

// Each parameter draws from its own name-keyed stream, so adding or removing
// a component never shifts the initialization of the others.
template <class Scalar>
BasicTensor<Scalar> normal_parameter(Shape shape, double stddev, std::uint64_t seed, std::string_view name) {
  auto t = BasicTensor<Scalar>::zeros(std::move(shape), true);
  Rng rng(seed, name);
  auto& data = t.mutable_data();
  for (Eigen::Index i = 0; i < data.size(); ++i) data[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
  return t;
}

template <class Scalar>
void redraw_normal(BasicTensor<Scalar>& t, double stddev, std::uint64_t seed, std::string_view name) {
  Rng rng(seed, name);
  auto& data = t.mutable_data();
  for (Eigen::Index i = 0; i < data.size(); ++i) data[i] = static_cast<Scalar>(rng.normal(0.0, stddev));
}

inline double fan_in_stddev(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace gabvit::detail
