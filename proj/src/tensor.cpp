// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include "layerprobe/tensor.hpp"

#include <cmath>

#include "layerprobe/rng.hpp"

namespace lp {

std::size_t element_count(const Dims& dims) {
  std::size_t n = 1;
  for (int d : dims) {
    if (d <= 0) throw Error("non-positive dimension in " + dims_string(dims));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string dims_string(const Dims& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  for (T v : t.values()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template bool all_finite(const BasicTensor<float>&);
template bool all_finite(const BasicTensor<double>&);

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace lp
