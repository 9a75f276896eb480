#pragma once

#include <fftw3.h>

#include <memory>
#include <vector>

#include "common.hpp"

namespace ccdfse {

// RAII buffer with FFTW alignment.
class FftBuf {
 public:
  FftBuf() = default;
  explicit FftBuf(size_t n) : n_(n), p_(static_cast<cplx*>(fftw_malloc(sizeof(cplx) * n))) {
    if (!p_) throw Error("fftw_malloc failed");
  }
  ~FftBuf() { fftw_free(p_); }
  FftBuf(FftBuf&& o) noexcept : n_(o.n_), p_(o.p_) { o.p_ = nullptr; o.n_ = 0; }
  FftBuf& operator=(FftBuf&& o) noexcept {
    if (this != &o) {
      fftw_free(p_);
      p_ = o.p_;
      n_ = o.n_;
      o.p_ = nullptr;
      o.n_ = 0;
    }
    return *this;
  }
  FftBuf(const FftBuf&) = delete;
  FftBuf& operator=(const FftBuf&) = delete;

  cplx* data() { return p_; }
  const cplx* data() const { return p_; }
  size_t size() const { return n_; }
  cplx& operator[](size_t i) { return p_[i]; }
  const cplx& operator[](size_t i) const { return p_[i]; }
  void zero() { std::fill(p_, p_ + n_, cplx{}); }

 private:
  size_t n_ = 0;
  cplx* p_ = nullptr;
};

// In-place 3D complex transforms of size L^3. Plans are created once per L
// (guarded by a mutex) and shared; execution uses the new-array interface so
// concurrent callers may run on their own buffers.
void fft3_forward(int L, cplx* inout);
void fft3_backward(int L, cplx* inout);

// Smallest L >= n with only {2,3,5} factors.
int fft_nice_size(int n);

// Cube <-> padded-array index helpers. A "cube" holds integer offsets
// o in [-n/2, n/2) per axis in lexicographic order; a padded array is an
// L^3 DFT array with offsets wrapped mod L.
inline int wrap_index(int g, int L) {
  int r = g % L;
  return r < 0 ? r + L : r;
}
inline size_t padded_index(int gx, int gy, int gz, int L) {
  return (static_cast<size_t>(wrap_index(gx, L)) * L + wrap_index(gy, L)) * L + wrap_index(gz, L);
}

// Scatter an n-cube of coefficients into a zeroed L^3 array.
void scatter_cube(const cplx* cube, int n, cplx* padded, int L);

// Forward spectrum of a zero-padded n-cube: F = DFT_L(pad(cube)).
void cube_spectrum(const cplx* cube, int n, int L, cplx* spectrum);

// Correlation window from two spectra:
//   corr(G) = sum_{G'} conj(u1(G'+G)) u2(G'),
// evaluated for all G with |G_d| <= half per axis (window edge (2*half+1)^3,
// lexicographic). Requires L large enough that the window is alias-free.
void correlation_window(const cplx* spec1, const cplx* spec2, int L, int half, cplx* window,
                        cplx* scratch);

}  // namespace ccdfse
