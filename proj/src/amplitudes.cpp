#include "amplitudes.hpp"

#include <cblas.h>

#include <cstdio>

extern "C" void openblas_set_num_threads(int);

namespace ccdfse {

namespace {

struct BlasInit {
  BlasInit() { openblas_set_num_threads(1); }  // parallelism lives in our pools
};
const BlasInit g_blas_init;

}  // namespace

double AmpContext::denominator(const Quadruple& q, const Frac3& ki, const Frac3& kj,
                               const Frac3& ka, const Frac3& kb) const {
  double d = eps_occ(q.i, ki) + eps_occ(q.j, kj) - eps_vir(q.a, ka) - eps_vir(q.b, kb);
  if (!(d < -1e-8)) throw Error("denominator: |eps| too small (gap closed?)");
  return d;
}

cplx AmpContext::mp2(const Quadruple& q, const Frac3& ki, const Frac3& kj, const Frac3& ka) const {
  Frac3 kb = conserve(ki, kj, ka);
  double d = denominator(q, ki, kj, ka, kb);
  cplx v = eri->eri(EriKey{vir_band(q.a), vir_band(q.b), q.i, q.j, ka, kb, ki, kj});
  return v / d;
}

double AmplitudeTensor::max_abs() const {
  double m = 0;
  for (const cplx& v : data) m = std::max(m, std::abs(v));
  return m;
}

bool AmplitudeTensor::finite() const {
  for (const cplx& v : data)
    if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
  return true;
}

AmplitudeTensor make_zero_tensor(const AmpContext& ctx, const MonkhorstPackMesh& mesh) {
  AmplitudeTensor t;
  t.mesh = &mesh;
  t.nocc = ctx.nocc();
  t.nvir = ctx.nvir();
  size_t n = static_cast<size_t>(mesh.n_k) * mesh.n_k * mesh.n_k * t.block();
  size_t bytes = n * sizeof(cplx);
  if (bytes > ctx.budget_bytes) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "amplitude tensor at N_k=%d needs %.2f GiB, budget %.2f GiB", mesh.n_k,
                  bytes / double(1 << 30), ctx.budget_bytes / double(1 << 30));
    throw BudgetError(buf);
  }
  t.data.assign(n, cplx{});
  return t;
}

AmplitudeTensor sample_on_mesh(const AmpContext& ctx, const ExactAmplitude& t,
                               const MonkhorstPackMesh& mesh) {
  AmplitudeTensor out = make_zero_tensor(ctx, mesh);
  int N = mesh.n_k;
  parallel_for(static_cast<std::int64_t>(N) * N, [&](std::int64_t p) {
    int ki = static_cast<int>(p / N), kj = static_cast<int>(p % N);
    for (int ka = 0; ka < N; ++ka)
      for (int i = 0; i < out.nocc; ++i)
        for (int j = 0; j < out.nocc; ++j)
          for (int a = 0; a < out.nvir; ++a)
            for (int b = 0; b < out.nvir; ++b)
              out.at(ki, kj, ka, i, j, a, b) =
                  t(Quadruple{i, j, a, b}, mesh.at(ki).fractional, mesh.at(kj).fractional,
                    mesh.at(ka).fractional);
  });
  return out;
}

namespace {

// Band occupancy pattern of one ERI table slot.
enum class Sp { o, v };

struct TablePattern {
  Sp s1, s2, s3, s4;
};

int slot_dim(const AmpContext& ctx, Sp s) { return s == Sp::o ? ctx.nocc() : ctx.nvir(); }
int slot_band(const AmpContext& ctx, Sp s, int idx) {
  return s == Sp::o ? idx : ctx.vir_band(idx);
}

// Fills one ERI table V[k1,k2,k3] (block ((n1 n2)(n3 n4))) with per-q-class
// GEMMs.
void build_table(const AmpContext& ctx, const MonkhorstPackMesh& mesh, TablePattern pat,
                 std::vector<cplx>& out) {
  const int N = mesh.n_k;
  MeshOps ops(mesh);
  int d1 = slot_dim(ctx, pat.s1), d2 = slot_dim(ctx, pat.s2), d3 = slot_dim(ctx, pat.s3),
      d4 = slot_dim(ctx, pat.s4);
  int block = d1 * d2 * d3 * d4;
  out.assign(static_cast<size_t>(N) * N * N * block, cplx{});

  parallel_for(N, [&](std::int64_t qi) {
    int q = static_cast<int>(qi);
    std::vector<cplx> E(static_cast<size_t>(N) * N);
    for (int n1 = 0; n1 < d1; ++n1)
      for (int n2 = 0; n2 < d2; ++n2)
        for (int n3 = 0; n3 < d3; ++n3)
          for (int n4 = 0; n4 < d4; ++n4) {
            eri_class_matrix(*ctx.eri, mesh, q, slot_band(ctx, pat.s1, n1),
                             slot_band(ctx, pat.s2, n2), slot_band(ctx, pat.s3, n3),
                             slot_band(ctx, pat.s4, n4), E.data());
            for (int r = 0; r < N; ++r) {
              int k3 = ops.add(r, q);
              for (int c = 0; c < N; ++c) {
                size_t idx = ((static_cast<size_t>(r) * N + c) * N + k3) * block +
                             static_cast<size_t>(((n1 * d2 + n2) * d3 + n3) * d4 + n4);
                out[idx] = E[static_cast<size_t>(r) * N + c];
              }
            }
          }
  });
}

}  // namespace

CcdTables build_ccd_tables(const AmpContext& ctx, const MonkhorstPackMesh& mesh) {
  CcdTables t;
  t.mesh = &mesh;
  t.nocc = ctx.nocc();
  t.nvir = ctx.nvir();
  int no = t.nocc, nv = t.nvir;
  size_t n3 = static_cast<size_t>(mesh.n_k) * mesh.n_k * mesh.n_k;
  size_t table_bytes = n3 * sizeof(cplx) *
                       (static_cast<size_t>(no * no * no * no) + size_t(nv * nv * nv * nv) +
                        3 * size_t(no * no * nv * nv));
  // The map itself materializes three chi tables and three work tensors.
  size_t est = table_bytes + n3 * sizeof(cplx) * size_t(no * no * nv * nv) * 8;
  if (est > ctx.budget_bytes) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "ccd tables at N_k=%d need about %.2f GiB, budget %.2f GiB", mesh.n_k,
                  est / double(1 << 30), ctx.budget_bytes / double(1 << 30));
    throw BudgetError(buf);
  }

  build_table(ctx, mesh, {Sp::o, Sp::o, Sp::o, Sp::o}, t.oooo);
  build_table(ctx, mesh, {Sp::v, Sp::v, Sp::v, Sp::v}, t.vvvv);
  build_table(ctx, mesh, {Sp::o, Sp::o, Sp::v, Sp::v}, t.oovv);
  build_table(ctx, mesh, {Sp::v, Sp::o, Sp::o, Sp::v}, t.voov);
  build_table(ctx, mesh, {Sp::v, Sp::o, Sp::v, Sp::o}, t.vovo);

  t.eo.resize(static_cast<size_t>(mesh.n_k));
  t.ev.resize(static_cast<size_t>(mesh.n_k));
  for (int k = 0; k < mesh.n_k; ++k) {
    const BandStates& st = ctx.sys->bands(mesh.at(k));
    t.eo[static_cast<size_t>(k)].assign(st.energies.begin(), st.energies.begin() + no);
    t.ev[static_cast<size_t>(k)].assign(st.energies.begin() + no, st.energies.begin() + no + nv);
  }
  return t;
}

namespace {

// Flat accessors for table blocks.
struct TableView {
  const cplx* data;
  int N, d1, d2, d3, d4;
  cplx at(int k1, int k2, int k3, int n1, int n2, int n3, int n4) const {
    size_t idx = ((static_cast<size_t>(k1) * N + k2) * N + k3) * (d1 * d2 * d3 * d4) +
                 static_cast<size_t>(((n1 * d2 + n2) * d3 + n3) * d4 + n4);
    return data[idx];
  }
};

}  // namespace

CcdIntermediates build_intermediates(const AmpContext& ctx, const CcdTables& tables,
                                     const AmplitudeTensor& T, MapParts parts) {
  (void)ctx;
  const MonkhorstPackMesh& mesh = *tables.mesh;
  const int N = mesh.n_k;
  const int no = tables.nocc, nv = tables.nvir;
  MeshOps ops(mesh);
  const double invN = 1.0 / N;
  const bool quad = parts == MapParts::full;

  TableView Voooo{tables.oooo.data(), N, no, no, no, no};
  TableView Voovv{tables.oovv.data(), N, no, no, nv, nv};
  TableView Vvoov{tables.voov.data(), N, nv, no, no, nv};
  TableView Vvovo{tables.vovo.data(), N, nv, no, nv, no};

  CcdIntermediates out;
  out.kvv.assign(static_cast<size_t>(N) * nv * nv, cplx{});
  out.koo.assign(static_cast<size_t>(N) * no * no, cplx{});

  if (quad) {
    parallel_for(N, [&](std::int64_t kai) {
      int ka = static_cast<int>(kai);
      for (int c = 0; c < nv; ++c)
        for (int a = 0; a < nv; ++a) {
          cplx acc{};
          for (int kk = 0; kk < N; ++kk)
            for (int kl = 0; kl < N; ++kl) {
              int kd = ops.comb(kk, kl, ka);
              for (int k = 0; k < no; ++k)
                for (int l = 0; l < no; ++l)
                  for (int d = 0; d < nv; ++d)
                    acc += (2.0 * Voovv.at(kk, kl, ka, k, l, c, d) -
                            Voovv.at(kk, kl, kd, k, l, d, c)) *
                           T.at(kk, kl, ka, k, l, a, d);
            }
          out.kvv[(static_cast<size_t>(ka) * nv + c) * nv + a] = -invN * invN * acc;
        }
    });
    parallel_for(N, [&](std::int64_t kii) {
      int ki = static_cast<int>(kii);
      for (int i = 0; i < no; ++i)
        for (int k = 0; k < no; ++k) {
          cplx acc{};
          for (int kl = 0; kl < N; ++kl)
            for (int kc = 0; kc < N; ++kc) {
              int kd = ops.comb(ki, kl, kc);
              for (int l = 0; l < no; ++l)
                for (int c = 0; c < nv; ++c)
                  for (int d = 0; d < nv; ++d)
                    acc += (2.0 * Voovv.at(ki, kl, kc, k, l, c, d) -
                            Voovv.at(ki, kl, kd, k, l, d, c)) *
                           T.at(ki, kl, kc, i, l, c, d);
            }
          out.koo[(static_cast<size_t>(ki) * no + i) * no + k] = invN * invN * acc;
        }
    });
  }

  // chi_IJ^KL stored like Voooo: [kk,kl,ki] block ((k,l),(i,j)).
  out.chi_oooo = tables.oooo;
  if (quad) {
    parallel_for(static_cast<std::int64_t>(N) * N, [&](std::int64_t p) {
      int kk = static_cast<int>(p / N), kl = static_cast<int>(p % N);
      for (int ki = 0; ki < N; ++ki) {
        int kj = ops.comb(kk, kl, ki);
        for (int k = 0; k < no; ++k)
          for (int l = 0; l < no; ++l)
            for (int i = 0; i < no; ++i)
              for (int j = 0; j < no; ++j) {
                cplx acc{};
                for (int kc = 0; kc < N; ++kc)
                  for (int c = 0; c < nv; ++c)
                    for (int d = 0; d < nv; ++d)
                      acc += Voovv.at(kk, kl, kc, k, l, c, d) * T.at(ki, kj, kc, i, j, c, d);
                size_t idx = ((static_cast<size_t>(kk) * N + kl) * N + ki) * (no * no * no * no) +
                             static_cast<size_t>(((k * no + l) * no + i) * no + j);
                out.chi_oooo[idx] += invN * acc;
              }
      }
    });
  }

  // chi_IC^AK and chi_CI^AK, indexed [ki, kk, ka]; the first hole momentum
  // fixes k_c = fold(ka + kk - ki).
  size_t chi_block = static_cast<size_t>(nv) * no * no * nv;
  out.chi_voov.assign(static_cast<size_t>(N) * N * N * chi_block, cplx{});
  out.chi_vovo.assign(static_cast<size_t>(N) * N * N * chi_block, cplx{});
  parallel_for(static_cast<std::int64_t>(N) * N, [&](std::int64_t p) {
    int ki = static_cast<int>(p / N), kk = static_cast<int>(p % N);
    for (int ka = 0; ka < N; ++ka) {
      int kc = ops.comb(ka, kk, ki);
      for (int a = 0; a < nv; ++a)
        for (int k = 0; k < no; ++k)
          for (int i = 0; i < no; ++i)
            for (int c = 0; c < nv; ++c) {
              cplx s1 = Vvoov.at(ka, kk, ki, a, k, i, c);
              cplx s2 = Vvovo.at(ka, kk, kc, a, k, c, i);
              if (quad) {
                cplx q1{}, q2{};
                for (int kl = 0; kl < N; ++kl) {
                  int kd = ops.comb(kl, kk, kc);
                  for (int l = 0; l < no; ++l)
                    for (int d = 0; d < nv; ++d) {
                      q1 += (2.0 * Voovv.at(kl, kk, kd, l, k, d, c) -
                             Voovv.at(kl, kk, kc, l, k, c, d)) *
                                T.at(ki, kl, ka, i, l, a, d) -
                            Voovv.at(kl, kk, kd, l, k, d, c) * T.at(ki, kl, kd, i, l, d, a);
                      q2 += Voovv.at(kl, kk, kc, l, k, c, d) * T.at(ki, kl, kd, i, l, d, a);
                    }
                }
                s1 += 0.5 * invN * q1;
                s2 -= 0.5 * invN * q2;
              }
              size_t base = ((static_cast<size_t>(ki) * N + kk) * N + ka) * chi_block +
                            static_cast<size_t>(((a * no + k) * no + i) * nv + c);
              out.chi_voov[base] = s1;
              out.chi_vovo[base] = s2;
            }
    }
  });
  return out;
}

AmplitudeTensor ccd_map(const AmpContext& ctx, const CcdTables& tables, const AmplitudeTensor& T,
                        MapParts parts) {
  const MonkhorstPackMesh& mesh = *tables.mesh;
  const int N = mesh.n_k;
  const int no = tables.nocc, nv = tables.nvir;
  MeshOps ops(mesh);
  const double invN = 1.0 / N;

  // All other contributions vanish at T = 0 and the constant term is exactly
  // the MP2 amplitude; evaluating it pointwise keeps CCD(1) bit-identical to
  // the sampled exact amplitude.
  bool zero_input = true;
  for (const cplx& v : T.data)
    if (v != cplx{}) {
      zero_input = false;
      break;
    }
  if (zero_input) {
    ExactAmplitude mp2{ExactAmplitude::Tag::mp2, &ctx};
    return sample_on_mesh(ctx, mp2, mesh);
  }

  TableView Voovv{tables.oovv.data(), N, no, no, nv, nv};
  TableView Vvvvv{tables.vvvv.data(), N, nv, nv, nv, nv};
  CcdIntermediates im = build_intermediates(ctx, tables, T, parts);
  TableView ChiO{im.chi_oooo.data(), N, no, no, no, no};
  size_t chi_block = static_cast<size_t>(nv) * no * no * nv;
  auto chi_at = [&](const std::vector<cplx>& chi, int ki, int kk, int ka, int a, int k, int i,
                    int c) {
    return chi[((static_cast<size_t>(ki) * N + kk) * N + ka) * chi_block +
               static_cast<size_t>(((a * no + k) * no + i) * nv + c)];
  };

  // Non-permuted part and the P-group, assembled per output triple.
  AmplitudeTensor G_NP = make_zero_tensor(ctx, mesh);
  AmplitudeTensor G_P = make_zero_tensor(ctx, mesh);
  parallel_for(static_cast<std::int64_t>(N) * N, [&](std::int64_t p) {
    int ki = static_cast<int>(p / N), kj = static_cast<int>(p % N);
    for (int ka = 0; ka < N; ++ka) {
      int kb = ops.comb(ki, kj, ka);
      for (int i = 0; i < no; ++i)
        for (int j = 0; j < no; ++j)
          for (int a = 0; a < nv; ++a)
            for (int b = 0; b < nv; ++b) {
              cplx np = std::conj(Voovv.at(ki, kj, ka, i, j, a, b));
              cplx lin4h2p{}, lin2h4p{};
              for (int kk = 0; kk < N; ++kk) {
                int kl = ops.comb(ki, kj, kk);
                for (int k = 0; k < no; ++k)
                  for (int l = 0; l < no; ++l)
                    lin4h2p += ChiO.at(kk, kl, ki, k, l, i, j) * T.at(kk, kl, ka, k, l, a, b);
              }
              for (int kc = 0; kc < N; ++kc)
                for (int c = 0; c < nv; ++c)
                  for (int d = 0; d < nv; ++d)
                    lin2h4p += Vvvvv.at(ka, kb, kc, a, b, c, d) * T.at(ki, kj, kc, i, j, c, d);
              np += invN * (lin4h2p + lin2h4p);
              G_NP.at(ki, kj, ka, i, j, a, b) = np;

              cplx gp{};
              for (int c = 0; c < nv; ++c)
                gp += im.kvv[(static_cast<size_t>(ka) * nv + c) * nv + a] *
                      T.at(ki, kj, ka, i, j, c, b);
              for (int k = 0; k < no; ++k)
                gp -= im.koo[(static_cast<size_t>(ki) * no + i) * no + k] *
                      T.at(ki, kj, ka, k, j, a, b);
              cplx ring{};
              for (int kk = 0; kk < N; ++kk) {
                int kc = ops.comb(ka, kk, ki);
                for (int k = 0; k < no; ++k)
                  for (int c = 0; c < nv; ++c) {
                    ring += (2.0 * chi_at(im.chi_voov, ki, kk, ka, a, k, i, c) -
                             chi_at(im.chi_vovo, ki, kk, ka, a, k, i, c)) *
                            T.at(kk, kj, kc, k, j, c, b);
                    ring -= chi_at(im.chi_voov, ki, kk, ka, a, k, i, c) *
                            T.at(kk, kj, kb, k, j, b, c);
                    ring -= chi_at(im.chi_vovo, kj, kk, ka, a, k, j, c) *
                            T.at(kk, ki, kb, k, i, b, c);
                  }
              }
              gp += invN * ring;
              G_P.at(ki, kj, ka, i, j, a, b) = gp;
            }
    }
  });

  AmplitudeTensor out = make_zero_tensor(ctx, mesh);
  parallel_for(static_cast<std::int64_t>(N) * N, [&](std::int64_t p) {
    int ki = static_cast<int>(p / N), kj = static_cast<int>(p % N);
    for (int ka = 0; ka < N; ++ka) {
      int kb = ops.comb(ki, kj, ka);
      for (int i = 0; i < no; ++i)
        for (int j = 0; j < no; ++j)
          for (int a = 0; a < nv; ++a)
            for (int b = 0; b < nv; ++b) {
              double eps = tables.eo[static_cast<size_t>(ki)][static_cast<size_t>(i)] +
                           tables.eo[static_cast<size_t>(kj)][static_cast<size_t>(j)] -
                           tables.ev[static_cast<size_t>(ka)][static_cast<size_t>(a)] -
                           tables.ev[static_cast<size_t>(kb)][static_cast<size_t>(b)];
              cplx num = G_NP.at(ki, kj, ka, i, j, a, b) + G_P.at(ki, kj, ka, i, j, a, b) +
                         G_P.at(kj, ki, kb, j, i, b, a);
              out.at(ki, kj, ka, i, j, a, b) = num / eps;
            }
    }
  });
  return out;
}

CcdSolveResult ccd_solve(const AmpContext& ctx, const CcdTables& tables, int iterations) {
  if (iterations < 1) throw Error("ccd_solve: need at least one iteration");
  CcdSolveResult res;
  AmplitudeTensor T = make_zero_tensor(ctx, *tables.mesh);
  for (int n = 1; n <= iterations; ++n) {
    AmplitudeTensor next = ccd_map(ctx, tables, T);
    if (!next.finite()) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "ccd_solve: non-finite amplitude at iteration %d", n);
      throw Error(buf);
    }
    double step = 0;
    for (size_t idx = 0; idx < next.data.size(); ++idx)
      step = std::max(step, std::abs(next.data[idx] - T.data[idx]));
    res.step_norms.push_back(step);
    T = std::move(next);
  }
  res.amplitude = std::move(T);
  return res;
}

CcdSolveResult ccd_solve(const AmpContext& ctx, const MonkhorstPackMesh& mesh, int iterations) {
  CcdTables tables = build_ccd_tables(ctx, mesh);
  return ccd_solve(ctx, tables, iterations);
}

cplx energy(const AmpContext& ctx, const AmplitudeTensor& T) {
  const MonkhorstPackMesh& mesh = *T.mesh;
  int N = mesh.n_k;
  int no = T.nocc, nv = T.nvir;
  cplx total = parallel_sum(static_cast<std::int64_t>(N) * N, [&](std::int64_t p) {
    int ki = static_cast<int>(p / N), kj = static_cast<int>(p % N);
    std::vector<cplx> terms(static_cast<size_t>(N));
    for (int ka = 0; ka < N; ++ka) {
      cplx s{};
      const Frac3& fi = mesh.at(ki).fractional;
      const Frac3& fj = mesh.at(kj).fractional;
      const Frac3& fa = mesh.at(ka).fractional;
      Frac3 fb = ctx.conserve(fi, fj, fa);
      for (int i = 0; i < no; ++i)
        for (int j = 0; j < no; ++j)
          for (int a = 0; a < nv; ++a)
            for (int b = 0; b < nv; ++b) {
              cplx w = ctx.eri->antisymmetrized(i, fi, j, fj, ctx.vir_band(a), fa,
                                                ctx.vir_band(b), fb);
              s += w * T.at(ki, kj, ka, i, j, a, b);
            }
      terms[static_cast<size_t>(ka)] = s;
    }
    return pairwise_sum(terms.data(), N);
  });
  double n3 = static_cast<double>(N) * N * N;
  return total / n3;
}

}  // namespace ccdfse
