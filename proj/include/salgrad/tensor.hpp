#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "salgrad/error.hpp"

namespace salgrad {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(std::span<const std::int64_t> shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

inline std::string shape_str(std::span<const std::int64_t> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense n-dimensional array, row-major. The single unit of numeric data:
// images, logits, parameters and gradients are all Tensors.
template <typename T>
struct TensorT {
  Shape shape;
  std::vector<T> data;

  TensorT() = default;
  TensorT(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
      throw DimensionError("tensor: shape " + shape_str(shape) + " needs " +
                           std::to_string(shape_numel(shape)) +
                           " values, got " + std::to_string(data.size()));
    for (auto d : shape)
      if (d <= 0)
        throw DimensionError("tensor: non-positive dim in " + shape_str(shape));
  }

  static TensorT zeros(Shape s) {
    auto n = shape_numel(s);
    return TensorT(std::move(s), std::vector<T>(static_cast<std::size_t>(n), T(0)));
  }
  static TensorT full(Shape s, T v) {
    auto n = shape_numel(s);
    return TensorT(std::move(s), std::vector<T>(static_cast<std::size_t>(n), v));
  }
  static TensorT scalar(T v) { return TensorT({1}, {v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const {
    return data[static_cast<std::size_t>(i)];
  }

  // 4-d NCHW accessor.
  T& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data[static_cast<std::size_t>(
        ((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  const T& at4(std::int64_t n, std::int64_t c, std::int64_t h,
               std::int64_t w) const {
    return data[static_cast<std::size_t>(
        ((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }

  T& at2(std::int64_t r, std::int64_t c) {
    return data[static_cast<std::size_t>(r * shape[1] + c)];
  }
  const T& at2(std::int64_t r, std::int64_t c) const {
    return data[static_cast<std::size_t>(r * shape[1] + c)];
  }

  bool all_finite() const {
    const std::int64_t total = numel();
    int bad = 0;
#pragma omp parallel for schedule(static) reduction(|| : bad)
    for (std::int64_t i = 0; i < total; ++i)
      bad = bad || !std::isfinite(data[static_cast<std::size_t>(i)]);
    return !bad;
  }
};

using Tensor = TensorT<float>;

template <typename T>
void require_finite(const TensorT<T>& t, const char* what) {
  if (!t.all_finite())
    throw InvariantError(std::string(what) + ": non-finite value in output");
}

inline TensorT<double> widen(const Tensor& t) {
  TensorT<double> out;
  out.shape = t.shape;
  out.data.assign(t.data.begin(), t.data.end());
  return out;
}

inline Tensor narrow(const TensorT<double>& t) {
  Tensor out;
  out.shape = t.shape;
  out.data.reserve(t.data.size());
  for (double v : t.data) out.data.push_back(static_cast<float>(v));
  return out;
}

// Largest |a - b| over all elements; shapes must match.
template <typename T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b))
    throw DimensionError("max_abs_diff: " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

template <typename T>
bool bitwise_equal(const TensorT<T>& a, const TensorT<T>& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.ptr(), b.ptr(), a.data.size() * sizeof(T)) == 0;
}

}  // namespace salgrad
