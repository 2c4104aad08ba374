#pragma once

#include <algorithm>
#include <cstring>
#include <initializer_list>
#include <new>
#include <numeric>
#include <vector>

#include "dttnet/core.hpp"

namespace dttnet {

// 64-byte aligned storage for everything SIMD kernels touch. Heap addresses
// vary between allocations; pinning the alignment keeps vectorized reduction
// orders, and therefore results, bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

using RealVec = std::vector<real, AlignedAllocator<real>>;

// Dense row-major tensor of doubles, rank 1..4. The last axis is contiguous.
// Feature maps use [B x C x F x T], waveforms [channels x time],
// spectrograms [C x F x T].
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<long> dims) : dims_(std::move(dims)) {
    long n = 1;
    for (long d : dims_) {
      check(d > 0, "Tensor: dims must be positive");
      n *= d;
    }
    v_.assign(static_cast<size_t>(n), 0.0);
  }

  Tensor(std::initializer_list<long> dims) : Tensor(std::vector<long>(dims)) {}

  static Tensor zeros(std::vector<long> dims) { return Tensor(std::move(dims)); }

  static Tensor full(std::vector<long> dims, real value) {
    Tensor t(std::move(dims));
    std::fill(t.v_.begin(), t.v_.end(), value);
    return t;
  }

  int rank() const { return static_cast<int>(dims_.size()); }
  long dim(int i) const { return dims_[static_cast<size_t>(i)]; }
  const std::vector<long>& dims() const { return dims_; }
  long numel() const { return static_cast<long>(v_.size()); }
  bool empty() const { return v_.empty(); }

  real* data() { return v_.data(); }
  const real* data() const { return v_.data(); }

  real& operator[](long i) { return v_[static_cast<size_t>(i)]; }
  real operator[](long i) const { return v_[static_cast<size_t>(i)]; }

  real& at(long i) { return v_[static_cast<size_t>(i)]; }
  real& at(long i, long j) { return v_[static_cast<size_t>(i * dims_[1] + j)]; }
  real& at(long i, long j, long k) {
    return v_[static_cast<size_t>((i * dims_[1] + j) * dims_[2] + k)];
  }
  real& at(long i, long j, long k, long l) {
    return v_[static_cast<size_t>(((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l)];
  }
  real at(long i) const { return v_[static_cast<size_t>(i)]; }
  real at(long i, long j) const { return v_[static_cast<size_t>(i * dims_[1] + j)]; }
  real at(long i, long j, long k) const {
    return v_[static_cast<size_t>((i * dims_[1] + j) * dims_[2] + k)];
  }
  real at(long i, long j, long k, long l) const {
    return v_[static_cast<size_t>(((i * dims_[1] + j) * dims_[2] + k) * dims_[3] + l)];
  }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  // Reinterprets the buffer with new dims of equal element count.
  Tensor reshaped(std::vector<long> dims) const {
    Tensor t;
    t.dims_ = std::move(dims);
    long n = 1;
    for (long d : t.dims_) n *= d;
    check(n == numel(), "Tensor::reshaped: element count mismatch");
    t.v_ = v_;
    return t;
  }

  void fill(real x) { std::fill(v_.begin(), v_.end(), x); }
  void zero() { fill(0.0); }

  bool all_finite() const {
    for (real x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  real abs_max() const {
    real m = 0.0;
    for (real x : v_) m = std::max(m, std::abs(x));
    return m;
  }

  real sum() const { return std::accumulate(v_.begin(), v_.end(), 0.0); }

  real sq_norm() const {
    real s = 0.0;
    for (real x : v_) s += x * x;
    return s;
  }

  Tensor& operator+=(const Tensor& o) {
    check(same_shape(o), "Tensor +=: shape mismatch");
    for (long i = 0; i < numel(); ++i) v_[static_cast<size_t>(i)] += o.v_[static_cast<size_t>(i)];
    return *this;
  }

  Tensor& operator-=(const Tensor& o) {
    check(same_shape(o), "Tensor -=: shape mismatch");
    for (long i = 0; i < numel(); ++i) v_[static_cast<size_t>(i)] -= o.v_[static_cast<size_t>(i)];
    return *this;
  }

  Tensor& operator*=(real a) {
    for (real& x : v_) x *= a;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, real s) { return a *= s; }
  friend Tensor operator*(real s, Tensor a) { return a *= s; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.v_ == b.v_;
  }

 private:
  std::vector<long> dims_;
  RealVec v_;
};

inline real max_abs_diff(const Tensor& a, const Tensor& b) {
  check(a.same_shape(b), "max_abs_diff: shape mismatch");
  real m = 0.0;
  for (long i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dttnet
