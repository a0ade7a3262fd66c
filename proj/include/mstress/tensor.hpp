#pragma once

#include <cstddef>
#include <cstdint>
#include <new>
#include <string>
#include <vector>

#include "mstress/errors.hpp"

namespace mstress {

// Allocator pinning every buffer to one cache-line alignment. Uniform
// alignment keeps vectorized loop prologues identical across allocations,
// so floating-point reductions sum in the same order in every run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t kAlign = 64;

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(
        ::operator new(n * sizeof(T), std::align_val_t(kAlign)));
  }
  void deallocate(T* p, std::size_t) {
    ::operator delete(p, std::align_val_t(kAlign));
  }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

using DoubleBuffer = std::vector<double, AlignedAllocator<double>>;

// Dense row-major 2-D array of 64-bit floats. Vectors are [1,n] or [n,1].
struct Tensor {
  int32_t rows = 0;
  int32_t cols = 0;
  DoubleBuffer data;

  Tensor() = default;
  Tensor(int32_t r, int32_t c) : rows(r), cols(c), data(size_t(r) * size_t(c)) {}

  static Tensor zeros(int32_t r, int32_t c) { return Tensor(r, c); }
  static Tensor full(int32_t r, int32_t c, double v) {
    Tensor t(r, c);
    for (auto& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(double v) {
    Tensor t(1, 1);
    t.data[0] = v;
    return t;
  }

  int64_t size() const { return int64_t(rows) * cols; }
  double& at(int32_t i, int32_t j) { return data[size_t(i) * size_t(cols) + size_t(j)]; }
  double at(int32_t i, int32_t j) const {
    return data[size_t(i) * size_t(cols) + size_t(j)];
  }
  double* row(int32_t i) { return data.data() + size_t(i) * size_t(cols); }
  const double* row(int32_t i) const {
    return data.data() + size_t(i) * size_t(cols);
  }

  bool same_shape(const Tensor& o) const {
    return rows == o.rows && cols == o.cols;
  }
  std::string shape_str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
  }

  // Reshapes in place without reallocating when the element count allows it.
  void resize(int32_t r, int32_t c) {
    rows = r;
    cols = c;
    data.resize(size_t(r) * size_t(c));
  }
  void fill(double v) {
    for (auto& x : data) x = v;
  }
};

}  // namespace mstress
