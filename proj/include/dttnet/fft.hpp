#pragma once

#include <fftw3.h>

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "dttnet/core.hpp"

namespace dttnet {

// Real FFT of a fixed size, backed by FFTW (window 6144 = 2^11 * 3 needs a
// mixed-radix kernel). Plan creation is serialized; execution uses per-call
// scratch buffers, so a shared RealFft is safe to use from many threads.
class RealFft {
 public:
  static const RealFft& of_size(int n) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<RealFft>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[n];
    if (!slot) slot.reset(new RealFft(n));
    return *slot;
  }

  int size() const { return n_; }
  int bins() const { return n_ / 2 + 1; }

  // x[0..n) -> X[0..n/2], unnormalized: X[k] = sum_m x[m] e^{-2*pi*i*k*m/n}.
  void forward(const real* in, std::complex<real>* out) const {
    Scratch s(n_);
    std::copy(in, in + n_, s.re);
    fftw_execute_dft_r2c(fwd_, s.re, s.cx);
    auto* c = reinterpret_cast<std::complex<real>*>(s.cx);
    std::copy(c, c + bins(), out);
  }

  // X[0..n/2] -> x[0..n), normalized by 1/n. Imaginary parts at DC and
  // Nyquist are ignored (treated as zero), which pins the adjoint exactly.
  void inverse(const std::complex<real>* in, real* out) const {
    Scratch s(n_);
    auto* c = reinterpret_cast<std::complex<real>*>(s.cx);
    std::copy(in, in + bins(), c);
    c[0] = std::complex<real>(c[0].real(), 0.0);
    if (n_ % 2 == 0) c[bins() - 1] = std::complex<real>(c[bins() - 1].real(), 0.0);
    fftw_execute_dft_c2r(inv_, s.cx, s.re);
    const real scale = 1.0 / n_;
    for (int i = 0; i < n_; ++i) out[i] = s.re[i] * scale;
  }

  ~RealFft() {
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(inv_);
  }

  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

 private:
  explicit RealFft(int n) : n_(n) {
    check(n >= 2, "RealFft: size must be >= 2");
    Scratch s(n);
    fwd_ = fftw_plan_dft_r2c_1d(n, s.re, s.cx, FFTW_ESTIMATE);
    inv_ = fftw_plan_dft_c2r_1d(n, s.cx, s.re, FFTW_ESTIMATE);
    check(fwd_ && inv_, "RealFft: planning failed");
  }

  struct Scratch {
    explicit Scratch(int n) {
      re = fftw_alloc_real(static_cast<size_t>(n));
      cx = fftw_alloc_complex(static_cast<size_t>(n / 2 + 1));
    }
    ~Scratch() {
      fftw_free(re);
      fftw_free(cx);
    }
    double* re;
    fftw_complex* cx;
  };

  int n_;
  fftw_plan fwd_;
  fftw_plan inv_;
};

}  // namespace dttnet
