#pragma once

#include "eri.hpp"

namespace ccdfse {

// Hole indices i,j in [0, n_occ); particle indices a,b in [0, n_vir).
struct Quadruple {
  int i = 0, j = 0, a = 0, b = 0;
};

// Shared context for amplitude work: the model, the ERI engine, and the
// memory budget for tensor construction.
struct AmpContext {
  const ModelSystem* sys = nullptr;
  const EriEngine* eri = nullptr;
  size_t budget_bytes = size_t(4) << 30;

  int nocc() const { return sys->config().n_occ; }
  int nvir() const { return sys->config().n_vir; }
  int vir_band(int a) const { return nocc() + a; }

  Frac3 fold(const Frac3& f) const {
    Frac3 out;
    for (int d = 0; d < 3; ++d) out[d] = f[d].mod1();
    return out;
  }
  // k_b from crystal momentum conservation.
  Frac3 conserve(const Frac3& ki, const Frac3& kj, const Frac3& ka) const {
    return fold((ki + kj) - ka);
  }

  double eps_occ(int i, const Frac3& k) const { return sys->bands(k).energies[static_cast<size_t>(i)]; }
  double eps_vir(int a, const Frac3& k) const {
    return sys->bands(k).energies[static_cast<size_t>(vir_band(a))];
  }

  // eps_I + eps_J - eps_A - eps_B; strictly negative for a gapped system.
  double denominator(const Quadruple& q, const Frac3& ki, const Frac3& kj, const Frac3& ka,
                     const Frac3& kb) const;

  // Normalized MP2 / exact CCD(1) amplitude  <a ka, b kb | i ki, j kj> / eps.
  cplx mp2(const Quadruple& q, const Frac3& ki, const Frac3& kj, const Frac3& ka) const;
};

// Pointwise-evaluable exact amplitude (arbitrary momenta, not only mesh
// points). Only the CCD(1)/MP2 amplitude has a closed form.
struct ExactAmplitude {
  enum class Tag { mp2 };
  Tag tag = Tag::mp2;
  const AmpContext* ctx = nullptr;

  cplx operator()(const Quadruple& q, const Frac3& ki, const Frac3& kj, const Frac3& ka) const {
    return ctx->mp2(q, ki, kj, ka);
  }
};

// Dense double-amplitude tensor T_{ijab}(k_i,k_j,k_a) over a mesh; k_b is
// implied by conservation. Momentum triple outer, band block inner.
struct AmplitudeTensor {
  const MonkhorstPackMesh* mesh = nullptr;
  int nocc = 0, nvir = 0;
  std::vector<cplx> data;

  int n_k() const { return mesh->n_k; }
  int block() const { return nocc * nocc * nvir * nvir; }
  size_t bytes() const { return data.size() * sizeof(cplx); }

  size_t offset(int ki, int kj, int ka) const {
    return (static_cast<size_t>(ki) * n_k() + kj) * n_k() * block() +
           static_cast<size_t>(ka) * block();
  }
  int band_index(int i, int j, int a, int b) const {
    return ((i * nocc + j) * nvir + a) * nvir + b;
  }
  cplx& at(int ki, int kj, int ka, int i, int j, int a, int b) {
    return data[offset(ki, kj, ka) + static_cast<size_t>(band_index(i, j, a, b))];
  }
  cplx at(int ki, int kj, int ka, int i, int j, int a, int b) const {
    return data[offset(ki, kj, ka) + static_cast<size_t>(band_index(i, j, a, b))];
  }
  double max_abs() const;
  bool finite() const;
};

AmplitudeTensor make_zero_tensor(const AmpContext& ctx, const MonkhorstPackMesh& mesh);

// Entrywise evaluation of an exact amplitude on the mesh.
AmplitudeTensor sample_on_mesh(const AmpContext& ctx, const ExactAmplitude& t,
                               const MonkhorstPackMesh& mesh);

// Mesh-resident ERI tables and orbital energies backing the finite-mesh
// fixed-point map. Third momentum of each table determines the fourth by
// conservation.
struct CcdTables {
  const MonkhorstPackMesh* mesh = nullptr;
  int nocc = 0, nvir = 0;
  // <(o k1)(o k2)|(o k3)(o k4)>, block ((n1 n2)(n3 n4)); similarly below.
  std::vector<cplx> oooo, vvvv, oovv, voov, vovo;
  std::vector<std::vector<double>> eo, ev;  // orbital energies per mesh point

  size_t bytes() const {
    return (oooo.size() + vvvv.size() + oovv.size() + voov.size() + vovo.size()) * sizeof(cplx);
  }
};

CcdTables build_ccd_tables(const AmpContext& ctx, const MonkhorstPackMesh& mesh);

// Intermediate blocks of the amplitude equation, built from one input
// tensor. kappa blocks are momentum-diagonal; chi blocks carry three free
// momenta and are stored like the tables they extend.
struct CcdIntermediates {
  // kappa_C^A: [k_a][(c,a)], includes its leading minus sign.
  std::vector<cplx> kvv;
  // kappa_I^K: [k_i][(i,k)].
  std::vector<cplx> koo;
  // chi_IJ^KL stored like the oooo table: [kk,kl,ki] block ((k,l),(i,j)).
  std::vector<cplx> chi_oooo;
  // chi_IC^AK and chi_CI^AK: [ki,kk,ka], blocks ((a,k),(i,c)) and ((a,k),(c,i)).
  std::vector<cplx> chi_voov, chi_vovo;
};

enum class MapParts { full, linear_only };

CcdIntermediates build_intermediates(const AmpContext& ctx, const CcdTables& tables,
                                     const AmplitudeTensor& T,
                                     MapParts parts = MapParts::full);

// One application of the finite-mesh CCD fixed-point map F_{N_k}. At T = 0
// this is the MP2 amplitude and is evaluated through the same pointwise path
// as sample_on_mesh, so CCD(1) reproduces it bitwise.
AmplitudeTensor ccd_map(const AmpContext& ctx, const CcdTables& tables, const AmplitudeTensor& T,
                        MapParts parts = MapParts::full);

struct CcdSolveResult {
  AmplitudeTensor amplitude;
  std::vector<double> step_norms;  // ||T_m - T_{m-1}||_inf per iteration
};

// n applications of ccd_map starting from zero (CCD(n); CCD(1) = MP2).
CcdSolveResult ccd_solve(const AmpContext& ctx, const MonkhorstPackMesh& mesh, int iterations);
CcdSolveResult ccd_solve(const AmpContext& ctx, const CcdTables& tables, int iterations);

// MP3 amplitude at one mesh point: constant plus all linear terms of the map
// applied to the MP2 amplitude.
cplx mp3_amplitude(const AmpContext& ctx, const MonkhorstPackMesh& mesh, const Quadruple& q,
                   const Frac3& ki, const Frac3& kj, const Frac3& ka);

// Correlation-energy functional G_{N_k}(T) = (1/N^3) sum W.T  (antisymmetrized W).
cplx energy(const AmpContext& ctx, const AmplitudeTensor& T);

}  // namespace ccdfse
