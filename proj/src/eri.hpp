#pragma once

#include <list>
#include <memory>

#include "meanfield.hpp"

namespace ccdfse {

// Pair-density window: the correlation
//   rho(G) = sum_{G'} conj(u_{bra}(G'+G)) u_{ket}(G')
// of two folded-orbital coefficient vectors, tabulated for |G_d| <= half.
// The extra margin beyond the basis cube absorbs the integer shifts that
// arise when an ERI argument folds across the zone boundary.
struct PairWindow {
  int half = 0;
  std::vector<cplx> values;  // (2*half+1)^3, lexicographic

  cplx at(int x, int y, int z) const {
    int w = 2 * half + 1;
    if (std::abs(x) > half || std::abs(y) > half || std::abs(z) > half) return {};
    return values[static_cast<size_t>(((x + half) * w + (y + half)) * w + (z + half))];
  }
};

// Four orbital labels with exact momenta; crystal momentum conservation
// k1 + k2 - k3 - k4 in L* is required. Band indices are absolute (occupied
// first, then virtual).
struct EriKey {
  int n1, n2, n3, n4;
  Frac3 k1, k2, k3, k4;
};

// Evaluates the normalized ERI
//   <n1 k1, n2 k2 | n3 k3, n4 k4>
//     = (4 pi/|cell|) sum'_G rho_{13}(G) rho_{24}(-G) / |q+G|^2,
// with q = fold(k3 - k1) in [0,1)^3 fractional and the primed sum omitting
// |q+G| < 1e-10 (punctured convention). The G sum runs over the basis cube.
class EriEngine {
 public:
  EriEngine(const ModelSystem& system, size_t cache_budget_bytes = size_t(2) << 30);
  ~EriEngine();

  const ModelSystem& system() const { return *sys_; }

  // Cached pair-density window for a folded orbital pair.
  std::shared_ptr<const PairWindow> pair_window(int band_bra, const Frac3& k_bra, int band_ket,
                                                const Frac3& k_ket) const;

  // Pair density restricted to the basis cube (the spec's pair_density op).
  std::vector<cplx> pair_density(int band_bra, const Frac3& k_bra, int band_ket,
                                 const Frac3& k_ket) const;

  cplx eri(const EriKey& key) const;

  // 2 <i j | a b> - <i j | b a> with absolute band indices.
  cplx antisymmetrized(int i, const Frac3& ki, int j, const Frac3& kj, int a, const Frac3& ka,
                       int b, const Frac3& kb) const;

  // Coulomb weights 4 pi / (|cell| |q+G|^2) on the basis cube (0 at the
  // punctured entry); q_frac are the raw fractional components of q.
  std::vector<double> kernel_weights(const Vec3& q_frac) const;

  int window_half() const { return half_; }
  int corr_length() const { return corr_L_; }

  // Padded spectrum of one orbital (for bulk sweep paths).
  std::shared_ptr<const FftBuf> orbital_spectrum(int band, const Frac3& k) const;

  // Window from two precomputed spectra (no caching).
  PairWindow window_from_spectra(const FftBuf& bra, const FftBuf& ket) const;

  size_t cache_bytes() const;
  void clear_cache() const;

 private:
  struct Shard;
  std::shared_ptr<const PairWindow> compute_window(int n_bra, const Frac3& k_bra, int n_ket,
                                                   const Frac3& k_ket) const;

  const ModelSystem* sys_;
  int half_ = 0;
  int corr_L_ = 0;
  size_t budget_ = 0;
  static constexpr int kShards = 16;
  std::unique_ptr<Shard[]> shards_;
  std::unique_ptr<Shard[]> spectrum_shards_;
};

// Checks k1 + k2 - k3 - k4 in Z^3 exactly.
bool momentum_conserving(const EriKey& key);

// Per-q-class ERI matrix on a mesh:
//   out[r*N + c] = <n1 mesh[r], n2 mesh[c] | n3 fold(mesh[r]+q), n4 fold(mesh[c]-q)>
// where q is the induced-mesh point with linear index q_index. For fixed q
// the bra factor depends on the row only and the ket factor on the column
// only, so the whole block is one GEMM over the planewave index.
void eri_class_matrix(const EriEngine& eri, const MonkhorstPackMesh& mesh, int q_index, int n1,
                      int n2, int n3, int n4, cplx* out);

}  // namespace ccdfse
