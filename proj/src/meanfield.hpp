#pragma once

#include <Eigen/Dense>
#include <memory>
#include <mutex>
#include <unordered_map>

#include "fft.hpp"
#include "lattice.hpp"

namespace ccdfse {

// Lattice-periodized Gaussian well: V(r) = sum_R C exp(-1/2 (r+R-r0)^T Sigma^-1 (r+R-r0)).
struct PotentialSpec {
  Vec3 center{0.5, 0.5, 0.5};
  Vec3 sigma2{0.01, 0.04, 0.09};  // diagonal of Sigma
  double strength = -200.0;
};

// Full cube of planewaves, per_dim values per axis with integer offsets in
// [-per_dim/2, per_dim/2), lexicographic order.
struct PlanewaveBasis {
  int per_dim = 0;
  std::vector<Int3> g_vectors;

  int size() const { return static_cast<int>(g_vectors.size()); }
  int half() const { return per_dim / 2; }
  // Linear index of an integer offset triple, or -1 when outside the cube.
  int index_of(int gx, int gy, int gz) const {
    int h = half(), n = per_dim;
    int x = gx + h, y = gy + h, z = gz + h;
    if (x < 0 || x >= n || y < 0 || y >= n || z < 0 || z >= n) return -1;
    return (x * n + y) * n + z;
  }
};

PlanewaveBasis make_basis(int per_dim);

// Fourier coefficients of the periodized Gaussian on the basis cube:
// V(G) = (C/|cell|) (2 pi)^{3/2} sqrt(det Sigma) exp(-1/2 G^T Sigma G) exp(-i G.r0).
std::vector<cplx> potential_fourier(const PotentialSpec& spec, const UnitCell& cell,
                                    const PlanewaveBasis& basis);

// Orbitals and energies at one k. Columns of `coefficients` are orthonormal
// planewave coefficient vectors u_{nk}(G), rows ordered like basis.g_vectors.
struct BandStates {
  KPoint k;
  std::vector<double> energies;                 // ascending, one per band
  Eigen::MatrixXcd coefficients;                // basis.size() x n_bands
};

// Phase-fixes every column: the entry of largest magnitude (ties broken by
// lowest row index) is made real and strictly positive.
void fix_gauge(BandStates& states);

struct ModelConfig {
  UnitCell cell = UnitCell::cubic(1.0);
  PotentialSpec potential;
  int n_pw = 16;
  int n_occ = 1;
  int n_vir = 1;
  int extra_bands = 2;     // solved in addition to n_occ+n_vir, used only for diagnostics
  double residual_tol = 1e-9;
  int max_iterations = 600;
  bool force_dense = false;  // diagonalize densely regardless of basis size

  int n_bands() const { return n_occ + n_vir; }
};

// Fixed-potential Kohn-Sham model: H = -1/2 Laplacian + V. Thread-safe band
// cache keyed by exact fractional coordinates; states are immutable once
// published.
class ModelSystem {
 public:
  explicit ModelSystem(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const UnitCell& cell() const { return cfg_.cell; }
  const ReciprocalCell& reciprocal() const { return rec_; }
  const PlanewaveBasis& basis() const { return basis_; }
  const std::vector<cplx>& vhat() const { return vhat_; }

  // y = H(k) x with the potential convolution applied by padded FFT.
  void apply_hamiltonian(const Vec3& k_cart, const cplx* x, cplx* y) const;

  // Lowest bands at k (folded first); solved once and cached.
  const BandStates& bands(const KPoint& k) const;
  const BandStates& bands(const Frac3& fractional) const;

  // Dense diagonalization, bypassing both the iterative solver and the
  // cache. Test oracle; O(n^3).
  BandStates solve_dense(const KPoint& k) const;

  double orbital_energy(int band, const KPoint& k) const { return bands(k).energies[band]; }

  // Binary band-cache persistence (optimization only).
  void save_band_cache(const std::string& path) const;
  size_t load_band_cache(const std::string& path);

  size_t cached_count() const;

 private:
  BandStates solve_iterative(const KPoint& k) const;
  BandStates solve_at(const KPoint& k) const;

  ModelConfig cfg_;
  ReciprocalCell rec_;
  PlanewaveBasis basis_;
  std::vector<cplx> vhat_;     // on the basis cube (for reports/tests)
  int pad_L_ = 0;              // grid for the potential convolution
  std::vector<double> v_real_; // band-limited potential on the padded grid

  mutable std::mutex cache_mutex_;
  mutable std::unordered_map<Frac3, std::unique_ptr<BandStates>, Frac3Hash> cache_;
};

// min over probe k of eps_{n_occ+1,k} - eps_{n_occ,k}.
double direct_gap(const ModelSystem& system, const MonkhorstPackMesh& probe_mesh);

}  // namespace ccdfse
