// Copyright 2026 The layerprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lp {

/// Error type for every rejected precondition in the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Dims = std::vector<int>;

std::size_t element_count(const Dims& dims);
std::string dims_string(const Dims& dims);

/// Dense row-major tensor. The dims product always equals the element count.
template <typename T>
class BasicTensor {
 public:
  BasicTensor() = default;

  explicit BasicTensor(Dims dims, T fill = T(0))
      : dims_(std::move(dims)), data_(element_count(dims_), fill) {}

  BasicTensor(Dims dims, std::vector<T> data)
      : dims_(std::move(dims)), data_(std::move(data)) {
    if (element_count(dims_) != data_.size()) {
      throw Error("tensor dims " + dims_string(dims_) + " do not match " +
                  std::to_string(data_.size()) + " values");
    }
  }

  const Dims& dims() const { return dims_; }
  int dim(std::size_t i) const { return dims_.at(i); }
  std::size_t rank() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void reshape(Dims dims) {
    if (element_count(dims) != data_.size()) {
      throw Error("cannot reshape " + dims_string(dims_) + " to " +
                  dims_string(dims));
    }
    dims_ = std::move(dims);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) {
      out[i] = static_cast<U>(data_[i]);
    }
    return BasicTensor<U>(dims_, std::move(out));
  }

  /// Same dims and identical bytes (distinguishes -0 from 0 and compares NaN
  /// payloads).
  bool bitwise_equal(const BasicTensor& other) const {
    return dims_ == other.dims_ && data_.size() == other.data_.size() &&
           (data_.empty() || std::memcmp(data_.data(), other.data_.data(),
                                         data_.size() * sizeof(T)) == 0);
  }

 private:
  Dims dims_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

template <typename T>
bool all_finite(const BasicTensor<T>& t);

}  // namespace lp
