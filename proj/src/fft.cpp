#include "fft.hpp"

#include <map>
#include <mutex>

namespace ccdfse {

namespace {

struct PlanPair {
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;
};

std::mutex g_plan_mutex;
std::map<int, PlanPair>& plan_table() {
  static std::map<int, PlanPair> t;
  return t;
}

PlanPair get_plans(int L) {
  std::lock_guard<std::mutex> lock(g_plan_mutex);
  auto& table = plan_table();
  auto it = table.find(L);
  if (it != table.end()) return it->second;
  size_t n = static_cast<size_t>(L) * L * L;
  FftBuf scratch(n);
  PlanPair p;
  p.fwd = fftw_plan_dft_3d(L, L, L, reinterpret_cast<fftw_complex*>(scratch.data()),
                           reinterpret_cast<fftw_complex*>(scratch.data()), FFTW_FORWARD,
                           FFTW_MEASURE);
  p.bwd = fftw_plan_dft_3d(L, L, L, reinterpret_cast<fftw_complex*>(scratch.data()),
                           reinterpret_cast<fftw_complex*>(scratch.data()), FFTW_BACKWARD,
                           FFTW_MEASURE);
  if (!p.fwd || !p.bwd) throw Error("fftw planning failed");
  table[L] = p;
  return p;
}

}  // namespace

void fft3_forward(int L, cplx* inout) {
  PlanPair p = get_plans(L);
  fftw_execute_dft(p.fwd, reinterpret_cast<fftw_complex*>(inout),
                   reinterpret_cast<fftw_complex*>(inout));
}

void fft3_backward(int L, cplx* inout) {
  PlanPair p = get_plans(L);
  fftw_execute_dft(p.bwd, reinterpret_cast<fftw_complex*>(inout),
                   reinterpret_cast<fftw_complex*>(inout));
}

int fft_nice_size(int n) {
  for (int L = n;; ++L) {
    int r = L;
    for (int f : {2, 3, 5})
      while (r % f == 0) r /= f;
    if (r == 1) return L;
  }
}

void scatter_cube(const cplx* cube, int n, cplx* padded, int L) {
  int h = n / 2;
  size_t idx = 0;
  for (int x = -h; x < n - h; ++x)
    for (int y = -h; y < n - h; ++y)
      for (int z = -h; z < n - h; ++z) padded[padded_index(x, y, z, L)] = cube[idx++];
}

void cube_spectrum(const cplx* cube, int n, int L, cplx* spectrum) {
  size_t total = static_cast<size_t>(L) * L * L;
  std::fill(spectrum, spectrum + total, cplx{});
  scatter_cube(cube, n, spectrum, L);
  fft3_forward(L, spectrum);
}

void correlation_window(const cplx* spec1, const cplx* spec2, int L, int half, cplx* window,
                        cplx* scratch) {
  size_t total = static_cast<size_t>(L) * L * L;
  double inv = 1.0 / static_cast<double>(total);
  for (size_t i = 0; i < total; ++i) scratch[i] = std::conj(spec1[i]) * spec2[i];
  fft3_forward(L, scratch);
  int w = 2 * half + 1;
  size_t idx = 0;
  for (int x = -half; x <= half; ++x)
    for (int y = -half; y <= half; ++y)
      for (int z = -half; z <= half; ++z) window[idx++] = scratch[padded_index(x, y, z, L)] * inv;
  (void)w;
}

}  // namespace ccdfse
