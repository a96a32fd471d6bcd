// Copyright 2026 The UniME Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef UNIME_TENSOR_HPP_
#define UNIME_TENSOR_HPP_

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "unime/errors.hpp"

namespace unime {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor. Plain storage, no views; kernels index flat data.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape)) {}
  Tensor(Shape s, T fill)
      : shape(std::move(s)), data(shape_numel(shape), fill) {}

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  static Tensor zeros(Shape s) { return Tensor(std::move(s), T(0)); }
  static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<U>(data[i]);
    return out;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

template <typename T>
bool operator==(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape == b.shape && a.data == b.data;
}

}  // namespace unime

#endif  // UNIME_TENSOR_HPP_
