#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "distmark/errors.hpp"

namespace distmark {

// Dense row-major array with a dynamic shape. Datasets and markers are stored
// as float; the gradient-check suites instantiate the same math with double.
template <typename T>
struct TensorT {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  TensorT() = default;
  explicit TensorT(std::vector<std::size_t> s)
      : shape(std::move(s)), data(numel_of(shape), T{}) {}
  TensorT(std::vector<std::size_t> s, std::vector<T> values)
      : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel_of(shape)) {
      raise(ErrorCode::ShapeMismatch, "tensor data does not match its shape");
    }
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return s.empty() ? 0 : n;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  // Flat offset into an [N, C, H, W] tensor.
  std::size_t idx4(std::size_t n, std::size_t c, std::size_t h,
                   std::size_t w) const {
    return ((n * shape[1] + c) * shape[2] + h) * shape[3] + w;
  }

  T& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data[idx4(n, c, h, w)];
  }
  T at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data[idx4(n, c, h, w)];
  }

  bool same_shape(const TensorT& other) const { return shape == other.shape; }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename To, typename From>
TensorT<To> tensor_cast(const TensorT<From>& src) {
  TensorT<To> out;
  out.shape = src.shape;
  out.data.reserve(src.data.size());
  for (From v : src.data) out.data.push_back(static_cast<To>(v));
  return out;
}

}  // namespace distmark
