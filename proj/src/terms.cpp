#include "terms.hpp"

#include <cstdio>

namespace ccdfse {

namespace {

struct NameRow {
  TermId id;
  const char* name;
};
constexpr NameRow kNames[] = {
    {TermId::energy_direct, "energy_direct"},
    {TermId::energy_exchange, "energy_exchange"},
    {TermId::constant, "constant"},
    {TermId::lin_4h2p, "lin_4h2p"},
    {TermId::lin_2h4p, "lin_2h4p"},
    {TermId::lin_3h3p_ring, "lin_3h3p_ring"},
    {TermId::lin_3h3p_xc1, "lin_3h3p_xc1"},
    {TermId::lin_3h3p_xc2, "lin_3h3p_xc2"},
    {TermId::lin_3h3p_xc3, "lin_3h3p_xc3"},
    {TermId::quad_4h2p, "quad_4h2p"},
    {TermId::quad_3h3p_super, "quad_3h3p_super"},
    {TermId::quad_3h3p_xa, "quad_3h3p_xa"},
    {TermId::quad_3h3p_xb, "quad_3h3p_xb"},
    {TermId::quad_3h3p_xc, "quad_3h3p_xc"},
    {TermId::quad_3h3p_bc1, "quad_3h3p_bc1"},
    {TermId::quad_3h3p_bc2, "quad_3h3p_bc2"},
    {TermId::quad_3h3p_bc3, "quad_3h3p_bc3"},
    {TermId::quad_3h3p_cj, "quad_3h3p_cj"},
    {TermId::quad_kvv_direct, "quad_kvv_direct"},
    {TermId::quad_kvv_exchange, "quad_kvv_exchange"},
    {TermId::quad_koo_direct, "quad_koo_direct"},
    {TermId::quad_koo_exchange, "quad_koo_exchange"},
};

}  // namespace

const char* term_name(TermId id) {
  for (const auto& row : kNames)
    if (row.id == id) return row.name;
  return "?";
}

std::optional<TermId> term_from_name(std::string_view name) {
  for (const auto& row : kNames)
    if (name == row.name) return row.id;
  return std::nullopt;
}

bool term_is_energy(TermId id) {
  return id == TermId::energy_direct || id == TermId::energy_exchange;
}

bool term_is_quadratic(TermId id) {
  switch (id) {
    case TermId::quad_4h2p:
    case TermId::quad_3h3p_super:
    case TermId::quad_3h3p_xa:
    case TermId::quad_3h3p_xb:
    case TermId::quad_3h3p_xc:
    case TermId::quad_3h3p_bc1:
    case TermId::quad_3h3p_bc2:
    case TermId::quad_3h3p_bc3:
    case TermId::quad_3h3p_cj:
    case TermId::quad_kvv_direct:
    case TermId::quad_kvv_exchange:
    case TermId::quad_koo_direct:
    case TermId::quad_koo_exchange:
      return true;
    default:
      return false;
  }
}

const std::vector<CatalogEntry>& amplitude_catalog() {
  // Signs and prefactors transcribed from the fixed-point form of the
  // amplitude equation and its intermediate blocks.
  static const std::vector<CatalogEntry> catalog = {
      {TermId::constant, 1.0, false},
      {TermId::lin_4h2p, 1.0, false},
      {TermId::lin_2h4p, 1.0, false},
      {TermId::lin_3h3p_ring, 2.0, true},
      {TermId::lin_3h3p_xc1, -1.0, true},
      {TermId::lin_3h3p_xc2, -1.0, true},
      {TermId::lin_3h3p_xc3, -1.0, true},
      {TermId::quad_4h2p, 1.0, false},
      {TermId::quad_kvv_direct, -2.0, true},
      {TermId::quad_kvv_exchange, 1.0, true},
      {TermId::quad_koo_direct, -2.0, true},
      {TermId::quad_koo_exchange, 1.0, true},
      {TermId::quad_3h3p_super, 2.0, true},
      {TermId::quad_3h3p_xa, -1.0, true},
      {TermId::quad_3h3p_xb, -1.0, true},
      {TermId::quad_3h3p_xc, 0.5, true},
      {TermId::quad_3h3p_bc1, -1.0, true},
      {TermId::quad_3h3p_bc2, 0.5, true},
      {TermId::quad_3h3p_bc3, 0.5, true},
      {TermId::quad_3h3p_cj, 0.5, true},
  };
  return catalog;
}

namespace {

struct Env {
  const AmpContext& ctx;
  const MonkhorstPackMesh& mesh;
  const ExactAmplitude& t;
  Quadruple q;
  Frac3 ki, kj, ka, kb;

  int no() const { return ctx.nocc(); }
  int nv() const { return ctx.nvir(); }
  int I() const { return q.i; }
  int J() const { return q.j; }
  int A() const { return ctx.vir_band(q.a); }
  int B() const { return ctx.vir_band(q.b); }

  double eps() const { return ctx.denominator(q, ki, kj, ka, kb); }
  Frac3 fold(const Frac3& f) const { return ctx.fold(f); }
  const Frac3& kp(int idx) const { return mesh.at(idx).fractional; }

  cplx eri(int n1, const Frac3& f1, int n2, const Frac3& f2, int n3, const Frac3& f3, int n4,
           const Frac3& f4) const {
    return ctx.eri->eri(EriKey{n1, n2, n3, n4, f1, f2, f3, f4});
  }
  cplx amp(int bi, int bj, int ba, int bb, const Frac3& fi, const Frac3& fj,
           const Frac3& fa) const {
    return t(Quadruple{bi, bj, ba, bb}, fi, fj, fa);
  }
};

// (1/(eps*N)) sum over one internal mesh momentum.
cplx linear_sum(const Env& e, const std::function<cplx(const Frac3&)>& summand) {
  int N = e.mesh.n_k;
  cplx s = parallel_sum(N, [&](std::int64_t p) { return summand(e.kp(static_cast<int>(p))); });
  return s / (e.eps() * static_cast<double>(N));
}

// (1/(eps*N^2)) sum over two internal mesh momenta.
cplx quadratic_sum(const Env& e, const std::function<cplx(const Frac3&, const Frac3&)>& summand) {
  int N = e.mesh.n_k;
  cplx s = parallel_sum(static_cast<std::int64_t>(N) * N, [&](std::int64_t p) {
    return summand(e.kp(static_cast<int>(p / N)), e.kp(static_cast<int>(p % N)));
  });
  return s / (e.eps() * static_cast<double>(N) * static_cast<double>(N));
}

cplx generic_amplitude_term(const Env& e, TermId id) {
  const int no = e.no(), nv = e.nv();
  const AmpContext& ctx = e.ctx;
  switch (id) {
    case TermId::constant:
      return e.eri(e.A(), e.ka, e.B(), e.kb, e.I(), e.ki, e.J(), e.kj) / e.eps();

    case TermId::lin_4h2p:
      return linear_sum(e, [&](const Frac3& kk) {
        Frac3 kl = e.fold((e.ki + e.kj) - kk);
        cplx s{};
        for (int k = 0; k < no; ++k)
          for (int l = 0; l < no; ++l)
            s += e.eri(k, kk, l, kl, e.I(), e.ki, e.J(), e.kj) *
                 e.amp(k, l, e.q.a, e.q.b, kk, kl, e.ka);
        return s;
      });

    case TermId::lin_2h4p:
      return linear_sum(e, [&](const Frac3& kc) {
        Frac3 kd = e.fold((e.ka + e.kb) - kc);
        cplx s{};
        for (int c = 0; c < nv; ++c)
          for (int d = 0; d < nv; ++d)
            s += e.eri(e.A(), e.ka, e.B(), e.kb, ctx.vir_band(c), kc, ctx.vir_band(d), kd) *
                 e.amp(e.q.i, e.q.j, c, d, e.ki, e.kj, kc);
        return s;
      });

    case TermId::lin_3h3p_ring:
      return linear_sum(e, [&](const Frac3& kk) {
        Frac3 kc = e.fold((e.ka + kk) - e.ki);
        cplx s{};
        for (int k = 0; k < no; ++k)
          for (int c = 0; c < nv; ++c)
            s += e.eri(e.A(), e.ka, k, kk, e.I(), e.ki, ctx.vir_band(c), kc) *
                 e.amp(k, e.q.j, c, e.q.b, kk, e.kj, kc);
        return s;
      });

    case TermId::lin_3h3p_xc1:
      return linear_sum(e, [&](const Frac3& kk) {
        Frac3 kc = e.fold((e.ka + kk) - e.ki);
        cplx s{};
        for (int k = 0; k < no; ++k)
          for (int c = 0; c < nv; ++c)
            s += e.eri(e.A(), e.ka, k, kk, ctx.vir_band(c), kc, e.I(), e.ki) *
                 e.amp(k, e.q.j, c, e.q.b, kk, e.kj, kc);
        return s;
      });

    case TermId::lin_3h3p_xc2:
      return linear_sum(e, [&](const Frac3& kk) {
        Frac3 kc = e.fold((e.ka + kk) - e.ki);
        cplx s{};
        for (int k = 0; k < no; ++k)
          for (int c = 0; c < nv; ++c)
            s += e.eri(e.A(), e.ka, k, kk, e.I(), e.ki, ctx.vir_band(c), kc) *
                 e.amp(k, e.q.j, e.q.b, c, kk, e.kj, e.kb);
        return s;
      });

    case TermId::lin_3h3p_xc3:
      return linear_sum(e, [&](const Frac3& kk) {
        Frac3 kc = e.fold((e.ka + kk) - e.kj);
        cplx s{};
        for (int k = 0; k < no; ++k)
          for (int c = 0; c < nv; ++c)
            s += e.eri(e.A(), e.ka, k, kk, ctx.vir_band(c), kc, e.J(), e.kj) *
                 e.amp(k, e.q.i, e.q.b, c, kk, e.ki, e.kb);
        return s;
      });

    case TermId::quad_4h2p:
      return quadratic_sum(e, [&](const Frac3& kk, const Frac3& kc) {
        Frac3 kl = e.fold((e.ki + e.kj) - kk);
        Frac3 kd = e.fold((e.ki + e.kj) - kc);
        cplx s{};
        for (int k = 0; k < no; ++k)
          for (int l = 0; l < no; ++l)
            for (int c = 0; c < nv; ++c)
              for (int d = 0; d < nv; ++d)
                s += e.eri(k, kk, l, kl, ctx.vir_band(c), kc, ctx.vir_band(d), kd) *
                     e.amp(e.q.i, e.q.j, c, d, e.ki, e.kj, kc) *
                     e.amp(k, l, e.q.a, e.q.b, kk, kl, e.ka);
        return s;
      });

    case TermId::quad_3h3p_super:
    case TermId::quad_3h3p_xa:
    case TermId::quad_3h3p_xb:
    case TermId::quad_3h3p_xc:
    case TermId::quad_3h3p_bc1:
    case TermId::quad_3h3p_bc2:
    case TermId::quad_3h3p_bc3:
      return quadratic_sum(e, [&](const Frac3& kk, const Frac3& kl) {
        Frac3 kc = e.fold((e.ka + kk) - e.ki);
        Frac3 kd = e.fold((e.ki + kl) - e.ka);
        cplx s{};
        for (int k = 0; k < no; ++k)
          for (int l = 0; l < no; ++l)
            for (int c = 0; c < nv; ++c)
              for (int d = 0; d < nv; ++d) {
                int vc = ctx.vir_band(c), vd = ctx.vir_band(d);
                cplx v;
                bool swapped_eri = (id == TermId::quad_3h3p_xa || id == TermId::quad_3h3p_xc ||
                                    id == TermId::quad_3h3p_bc2);
                if (swapped_eri)
                  v = e.eri(l, kl, k, kk, vc, kc, vd, kd);
                else
                  v = e.eri(l, kl, k, kk, vd, kd, vc, kc);
                cplx t1;
                if (id == TermId::quad_3h3p_xb || id == TermId::quad_3h3p_xc ||
                    id == TermId::quad_3h3p_bc3)
                  t1 = e.amp(e.q.i, l, d, e.q.a, e.ki, kl, kd);
                else
                  t1 = e.amp(e.q.i, l, e.q.a, d, e.ki, kl, e.ka);
                cplx t2;
                if (id == TermId::quad_3h3p_bc1 || id == TermId::quad_3h3p_bc2 ||
                    id == TermId::quad_3h3p_bc3)
                  t2 = e.amp(k, e.q.j, e.q.b, c, kk, e.kj, e.kb);
                else
                  t2 = e.amp(k, e.q.j, c, e.q.b, kk, e.kj, kc);
                s += v * t1 * t2;
              }
        return s;
      });

    case TermId::quad_3h3p_cj:
      return quadratic_sum(e, [&](const Frac3& kk, const Frac3& kl) {
        Frac3 kc = e.fold((e.ka + kk) - e.kj);
        Frac3 kd = e.fold((e.kj + kl) - e.ka);
        cplx s{};
        for (int k = 0; k < no; ++k)
          for (int l = 0; l < no; ++l)
            for (int c = 0; c < nv; ++c)
              for (int d = 0; d < nv; ++d)
                s += e.eri(l, kl, k, kk, ctx.vir_band(c), kc, ctx.vir_band(d), kd) *
                     e.amp(e.q.j, l, d, e.q.a, e.kj, kl, kd) *
                     e.amp(k, e.q.i, e.q.b, c, kk, e.ki, e.kb);
        return s;
      });

    case TermId::quad_kvv_direct:
    case TermId::quad_kvv_exchange:
      return quadratic_sum(e, [&](const Frac3& kk, const Frac3& kl) {
        Frac3 kd = e.fold((kk + kl) - e.ka);
        cplx s{};
        for (int k = 0; k < no; ++k)
          for (int l = 0; l < no; ++l)
            for (int c = 0; c < nv; ++c)
              for (int d = 0; d < nv; ++d) {
                int vc = ctx.vir_band(c), vd = ctx.vir_band(d);
                cplx v = (id == TermId::quad_kvv_direct)
                             ? e.eri(k, kk, l, kl, vc, e.ka, vd, kd)
                             : e.eri(k, kk, l, kl, vd, kd, vc, e.ka);
                s += v * e.amp(k, l, e.q.a, d, kk, kl, e.ka) *
                     e.amp(e.q.i, e.q.j, c, e.q.b, e.ki, e.kj, e.ka);
              }
        return s;
      });

    case TermId::quad_koo_direct:
    case TermId::quad_koo_exchange:
      return quadratic_sum(e, [&](const Frac3& kl, const Frac3& kc) {
        Frac3 kd = e.fold((e.ki + kl) - kc);
        cplx s{};
        for (int k = 0; k < no; ++k)
          for (int l = 0; l < no; ++l)
            for (int c = 0; c < nv; ++c)
              for (int d = 0; d < nv; ++d) {
                int vc = ctx.vir_band(c), vd = ctx.vir_band(d);
                cplx v = (id == TermId::quad_koo_direct)
                             ? e.eri(k, e.ki, l, kl, vc, kc, vd, kd)
                             : e.eri(k, e.ki, l, kl, vd, kd, vc, kc);
                s += v * e.amp(e.q.i, l, c, d, e.ki, kl, kc) *
                     e.amp(k, e.q.j, e.q.a, e.q.b, e.ki, e.kj, e.ka);
              }
        return s;
      });

    default:
      throw Error("generic_amplitude_term: not an amplitude term");
  }
}

cplx generic_energy_term(const Env& e, TermId id) {
  const int no = e.no(), nv = e.nv();
  const AmpContext& ctx = e.ctx;
  int N = e.mesh.n_k;
  cplx s = parallel_sum(static_cast<std::int64_t>(N) * N, [&](std::int64_t p) {
    const Frac3& fi = e.kp(static_cast<int>(p / N));
    const Frac3& fj = e.kp(static_cast<int>(p % N));
    std::vector<cplx> terms(static_cast<size_t>(N));
    for (int kai = 0; kai < N; ++kai) {
      const Frac3& fa = e.kp(kai);
      Frac3 fb = ctx.conserve(fi, fj, fa);
      cplx acc{};
      for (int i = 0; i < no; ++i)
        for (int j = 0; j < no; ++j)
          for (int a = 0; a < nv; ++a)
            for (int b = 0; b < nv; ++b) {
              int va = ctx.vir_band(a), vb = ctx.vir_band(b);
              cplx w = (id == TermId::energy_direct)
                           ? e.eri(i, fi, j, fj, va, fa, vb, fb)
                           : e.eri(i, fi, j, fj, vb, fb, va, fa);
              acc += w * e.amp(i, j, a, b, fi, fj, fa);
            }
      terms[static_cast<size_t>(kai)] = acc;
    }
    return pairwise_sum(terms.data(), N);
  });
  double n3 = static_cast<double>(N) * N * N;
  return s / n3;
}

// ---- accelerated paths -----------------------------------------------------

// Direct energy with the exact MP2 amplitude: per q class one ERI matrix
// E[r,c] = <IJ|AB>; the amplitude is conj(E)/eps, so each class contributes
// sum |E|^2 / eps.
cplx energy_direct_mp2(const Env& e) {
  const AmpContext& ctx = e.ctx;
  const MonkhorstPackMesh& mesh = e.mesh;
  const int N = mesh.n_k;
  const int no = e.no(), nv = e.nv();
  MeshOps ops(mesh);

  std::vector<std::vector<double>> eo(static_cast<size_t>(N)), ev(static_cast<size_t>(N));
  parallel_for(N, [&](std::int64_t k) {
    const BandStates& st = ctx.sys->bands(mesh.at(static_cast<int>(k)));
    eo[static_cast<size_t>(k)].assign(st.energies.begin(), st.energies.begin() + no);
    ev[static_cast<size_t>(k)].assign(st.energies.begin() + no, st.energies.begin() + no + nv);
  });

  std::vector<cplx> per_class(static_cast<size_t>(N));
  parallel_for(N, [&](std::int64_t qi) {
    int q = static_cast<int>(qi);
    std::vector<cplx> E(static_cast<size_t>(N) * N);
    std::vector<double> contrib;
    contrib.reserve(static_cast<size_t>(N) * N);
    double total = 0;
    for (int i = 0; i < no; ++i)
      for (int j = 0; j < no; ++j)
        for (int a = 0; a < nv; ++a)
          for (int b = 0; b < nv; ++b) {
            eri_class_matrix(*ctx.eri, mesh, q, i, j, ctx.vir_band(a), ctx.vir_band(b), E.data());
            contrib.assign(static_cast<size_t>(N) * N, 0.0);
            for (int r = 0; r < N; ++r) {
              int kar = ops.add(r, q);
              double u = eo[static_cast<size_t>(r)][static_cast<size_t>(i)] -
                         ev[static_cast<size_t>(kar)][static_cast<size_t>(a)];
              for (int c = 0; c < N; ++c) {
                int kbc = ops.sub(c, q);
                double epsv = u + eo[static_cast<size_t>(c)][static_cast<size_t>(j)] -
                              ev[static_cast<size_t>(kbc)][static_cast<size_t>(b)];
                cplx v = E[static_cast<size_t>(r) * N + c];
                contrib[static_cast<size_t>(r) * N + c] = std::norm(v) / epsv;
              }
            }
            total += pairwise_sum(contrib.data(), static_cast<std::int64_t>(contrib.size()));
          }
    per_class[static_cast<size_t>(qi)] = total;
  });
  cplx s = pairwise_sum(per_class.data(), N);
  double n3 = static_cast<double>(N) * N * N;
  return s / n3;
}

// Rank-one path for the fully momentum-diagonal quadratic term
// <LK|DC> t_IL^AD t_KJ^CB: both momentum transfers equal fold(ki - ka), so
// the double mesh sum factorizes per planewave index.
cplx quad_super_fast(const Env& e) {
  const AmpContext& ctx = e.ctx;
  const MonkhorstPackMesh& mesh = e.mesh;
  const int N = mesh.n_k;
  const int no = e.no(), nv = e.nv();
  MeshOps ops(mesh);
  auto idx_i = mesh.index_of(e.ki), idx_j = mesh.index_of(e.kj), idx_a = mesh.index_of(e.ka);
  if (!idx_i || !idx_j || !idx_a) throw Error("quad_super_fast: externals off mesh");
  int qe = ops.sub(*idx_i, *idx_a);
  Int3 jq = ops.dec(qe);
  Vec3 qf{double(jq[0]) / ops.m, double(jq[1]) / ops.m, double(jq[2]) / ops.m};
  std::vector<double> w = ctx.eri->kernel_weights(qf);
  const auto& gs = ctx.sys->basis().g_vectors;
  const int NG = static_cast<int>(gs.size());

  std::vector<cplx> Avec(static_cast<size_t>(NG), cplx{}), Bvec(static_cast<size_t>(NG), cplx{});
  std::mutex acc_mutex;
  parallel_for(N, [&](std::int64_t p) {
    int kl = static_cast<int>(p);
    int kd = ops.add(kl, qe);
    Int3 jl = ops.dec(kl);
    Int3 s1{(jl[0] + jq[0]) / ops.m, (jl[1] + jq[1]) / ops.m, (jl[2] + jq[2]) / ops.m};
    std::vector<cplx> local(static_cast<size_t>(NG), cplx{});
    for (int l = 0; l < no; ++l)
      for (int d = 0; d < nv; ++d) {
        auto win = ctx.eri->pair_window(l, mesh.at(kl).fractional, ctx.vir_band(d),
                                        mesh.at(kd).fractional);
        cplx tt = e.amp(e.q.i, l, e.q.a, d, e.ki, mesh.at(kl).fractional, e.ka);
        for (int g = 0; g < NG; ++g)
          local[static_cast<size_t>(g)] +=
              tt * win->at(gs[static_cast<size_t>(g)][0] - s1[0],
                           gs[static_cast<size_t>(g)][1] - s1[1],
                           gs[static_cast<size_t>(g)][2] - s1[2]);
      }
    std::lock_guard<std::mutex> lock(acc_mutex);
    for (int g = 0; g < NG; ++g) Avec[static_cast<size_t>(g)] += local[static_cast<size_t>(g)];
  });
  parallel_for(N, [&](std::int64_t p) {
    int kk = static_cast<int>(p);
    int kc = ops.sub(kk, qe);
    Int3 jk = ops.dec(kk);
    Int3 s2{jk[0] - jq[0] < 0 ? -1 : 0, jk[1] - jq[1] < 0 ? -1 : 0, jk[2] - jq[2] < 0 ? -1 : 0};
    std::vector<cplx> local(static_cast<size_t>(NG), cplx{});
    for (int k = 0; k < no; ++k)
      for (int c = 0; c < nv; ++c) {
        auto win = ctx.eri->pair_window(k, mesh.at(kk).fractional, ctx.vir_band(c),
                                        mesh.at(kc).fractional);
        cplx tt = e.amp(k, e.q.j, c, e.q.b, mesh.at(kk).fractional, e.kj,
                        mesh.at(kc).fractional);
        for (int g = 0; g < NG; ++g)
          local[static_cast<size_t>(g)] +=
              tt * win->at(-gs[static_cast<size_t>(g)][0] - s2[0],
                           -gs[static_cast<size_t>(g)][1] - s2[1],
                           -gs[static_cast<size_t>(g)][2] - s2[2]);
      }
    std::lock_guard<std::mutex> lock(acc_mutex);
    for (int g = 0; g < NG; ++g) Bvec[static_cast<size_t>(g)] += local[static_cast<size_t>(g)];
  });

  std::vector<cplx> terms(static_cast<size_t>(NG));
  for (int g = 0; g < NG; ++g)
    terms[static_cast<size_t>(g)] =
        w[static_cast<size_t>(g)] * Avec[static_cast<size_t>(g)] * Bvec[static_cast<size_t>(g)];
  cplx s = pairwise_sum(terms.data(), NG);
  return s / (e.eps() * static_cast<double>(N) * static_cast<double>(N));
}

// Streaming evaluation of the 4h2p quadratic term. Processes q classes in
// (q, -q) pairs so each pair-density window is built once and consumed by
// both classes (once as a bra factor, once as a ket factor).
cplx quad_4h2p_fast(const Env& e) {
  const AmpContext& ctx = e.ctx;
  const MonkhorstPackMesh& mesh = e.mesh;
  const int N = mesh.n_k;
  const int no = e.no(), nv = e.nv();
  MeshOps ops(mesh);
  auto idx_i = mesh.index_of(e.ki), idx_j = mesh.index_of(e.kj), idx_a = mesh.index_of(e.ka);
  if (!idx_i || !idx_j || !idx_a) throw Error("quad_4h2p_fast: externals off mesh");
  int sum_ij = ops.add(*idx_i, *idx_j);

  const EriEngine& eri = *ctx.eri;
  const auto& gs = ctx.sys->basis().g_vectors;
  const int NG = static_cast<int>(gs.size());
  const int L = eri.corr_length();
  const size_t Ltot = static_cast<size_t>(L) * L * L;

  // Budget: dense spectra for every orbital of the mesh plus two window
  // families per class pair.
  int nb = no + nv;
  size_t spectra_bytes = static_cast<size_t>(nb) * N * Ltot * sizeof(cplx);
  int wlen = 2 * eri.window_half() + 1;
  size_t window_bytes = 2ull * N * no * nv * wlen * wlen * wlen * sizeof(cplx);
  if (spectra_bytes + window_bytes > ctx.budget_bytes) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "quad_4h2p at N_k=%d needs %.2f GiB, budget %.2f GiB", N,
                  (spectra_bytes + window_bytes) / double(1 << 30),
                  ctx.budget_bytes / double(1 << 30));
    throw BudgetError(buf);
  }

  // t factors.
  std::vector<cplx> A(static_cast<size_t>(N) * nv * nv), B(static_cast<size_t>(N) * no * no);
  parallel_for(N, [&](std::int64_t p) {
    int kc = static_cast<int>(p);
    for (int c = 0; c < nv; ++c)
      for (int d = 0; d < nv; ++d)
        A[(static_cast<size_t>(kc) * nv + c) * nv + d] =
            e.amp(e.q.i, e.q.j, c, d, e.ki, e.kj, mesh.at(kc).fractional);
    int kk = kc;
    int kl = ops.sub(sum_ij, kk);
    for (int k = 0; k < no; ++k)
      for (int l = 0; l < no; ++l)
        B[(static_cast<size_t>(kk) * no + k) * no + l] =
            e.amp(k, l, e.q.a, e.q.b, mesh.at(kk).fractional, mesh.at(kl).fractional, e.ka);
  });

  // Dense spectra for all mesh orbitals.
  std::vector<FftBuf> spectra(static_cast<size_t>(nb) * N);
  parallel_for(static_cast<std::int64_t>(nb) * N, [&](std::int64_t p) {
    int n = static_cast<int>(p / N), k = static_cast<int>(p % N);
    const BandStates& st = ctx.sys->bands(mesh.at(k));
    FftBuf spec(Ltot);
    cube_spectrum(st.coefficients.col(n).data(), ctx.sys->basis().per_dim, L, spec.data());
    spectra[static_cast<size_t>(p)] = std::move(spec);
  });
  auto spec_at = [&](int band, int k) -> const FftBuf& {
    return spectra[static_cast<size_t>(band) * N + k];
  };

  // Window family storage: F[k][(occ,vir)] for transfer +q and -q.
  int fam_block = no * nv;
  std::vector<PairWindow> Fp(static_cast<size_t>(N) * fam_block),
      Fm(static_cast<size_t>(N) * fam_block);

  std::vector<cplx> class_values(static_cast<size_t>(N), cplx{});
  std::vector<char> done(static_cast<size_t>(N), 0);

  auto eval_class = [&](int q, const std::vector<PairWindow>& bra,
                        const std::vector<PairWindow>& ket) {
    Int3 jq = ops.dec(q);
    Vec3 qf{double(jq[0]) / ops.m, double(jq[1]) / ops.m, double(jq[2]) / ops.m};
    std::vector<double> w = eri.kernel_weights(qf);
    std::vector<cplx> per_row(static_cast<size_t>(N));
    parallel_for(N, [&](std::int64_t p) {
      int kk = static_cast<int>(p);
      int kc = ops.add(kk, q);
      int kl = ops.sub(sum_ij, kk);
      Int3 jk = ops.dec(kk), jl = ops.dec(kl);
      Int3 s1{(jk[0] + jq[0]) / ops.m, (jk[1] + jq[1]) / ops.m, (jk[2] + jq[2]) / ops.m};
      Int3 s2{jl[0] - jq[0] < 0 ? -1 : 0, jl[1] - jq[1] < 0 ? -1 : 0,
              jl[2] - jq[2] < 0 ? -1 : 0};
      cplx acc{};
      for (int k = 0; k < no; ++k)
        for (int c = 0; c < nv; ++c) {
          const PairWindow& w1 = bra[static_cast<size_t>(kk) * fam_block + k * nv + c];
          for (int l = 0; l < no; ++l)
            for (int d = 0; d < nv; ++d) {
              const PairWindow& w2 = ket[static_cast<size_t>(kl) * fam_block + l * nv + d];
              std::vector<cplx> terms(static_cast<size_t>(NG));
              for (int g = 0; g < NG; ++g) {
                const Int3& gg = gs[static_cast<size_t>(g)];
                terms[static_cast<size_t>(g)] =
                    w[static_cast<size_t>(g)] *
                    w1.at(gg[0] - s1[0], gg[1] - s1[1], gg[2] - s1[2]) *
                    w2.at(-gg[0] - s2[0], -gg[1] - s2[1], -gg[2] - s2[2]);
              }
              cplx v = pairwise_sum(terms.data(), NG);
              acc += v * A[(static_cast<size_t>(kc) * nv + c) * nv + d] *
                     B[(static_cast<size_t>(kk) * no + k) * no + l];
            }
        }
      per_row[static_cast<size_t>(p)] = acc;
    });
    return pairwise_sum(per_row.data(), N);
  };

  for (int q = 0; q < N; ++q) {
    if (done[static_cast<size_t>(q)]) continue;
    int nq = ops.neg(q);
    // Build the +q and -q window families once.
    parallel_for(N, [&](std::int64_t p) {
      int k = static_cast<int>(p);
      int kp = ops.add(k, q);
      int km = ops.sub(k, q);
      for (int o = 0; o < no; ++o)
        for (int v = 0; v < nv; ++v) {
          Fp[static_cast<size_t>(k) * fam_block + o * nv + v] =
              eri.window_from_spectra(spec_at(o, k), spec_at(ctx.vir_band(v), kp));
          Fm[static_cast<size_t>(k) * fam_block + o * nv + v] =
              eri.window_from_spectra(spec_at(o, k), spec_at(ctx.vir_band(v), km));
        }
    });
    class_values[static_cast<size_t>(q)] = eval_class(q, Fp, Fm);
    done[static_cast<size_t>(q)] = 1;
    if (nq != q && !done[static_cast<size_t>(nq)]) {
      class_values[static_cast<size_t>(nq)] = eval_class(nq, Fm, Fp);
      done[static_cast<size_t>(nq)] = 1;
    }
  }

  cplx s = pairwise_sum(class_values.data(), N);
  return s / (e.eps() * static_cast<double>(N) * static_cast<double>(N));
}

}  // namespace

cplx term_evaluate_generic(const AmpContext& ctx, TermId id, const ExactAmplitude& t,
                           const Quadruple& q, const Frac3& ki, const Frac3& kj, const Frac3& ka,
                           const MonkhorstPackMesh& mesh) {
  Env e{ctx, mesh, t, q, ctx.fold(ki), ctx.fold(kj), ctx.fold(ka), ctx.conserve(ki, kj, ka)};
  if (term_is_energy(id)) return generic_energy_term(e, id);
  return generic_amplitude_term(e, id);
}

cplx term_evaluate(const AmpContext& ctx, TermId id, const ExactAmplitude& t, const Quadruple& q,
                   const Frac3& ki, const Frac3& kj, const Frac3& ka,
                   const MonkhorstPackMesh& mesh) {
  Env e{ctx, mesh, t, q, ctx.fold(ki), ctx.fold(kj), ctx.fold(ka), ctx.conserve(ki, kj, ka)};
  bool on_mesh = mesh.index_of(e.ki).has_value() && mesh.index_of(e.kj).has_value() &&
                 mesh.index_of(e.ka).has_value();
  if (id == TermId::energy_direct && t.tag == ExactAmplitude::Tag::mp2)
    return energy_direct_mp2(e);
  if (id == TermId::quad_3h3p_super && on_mesh) return quad_super_fast(e);
  if (id == TermId::quad_4h2p && on_mesh && mesh.n_k >= 64) return quad_4h2p_fast(e);
  return term_evaluate_generic(ctx, id, t, q, ki, kj, ka, mesh);
}

cplx term_evaluate_permuted(const AmpContext& ctx, TermId id, const ExactAmplitude& t,
                            const Quadruple& q, const Frac3& ki, const Frac3& kj, const Frac3& ka,
                            const MonkhorstPackMesh& mesh) {
  Frac3 kb = ctx.conserve(ki, kj, ka);
  return term_evaluate(ctx, id, t, Quadruple{q.j, q.i, q.b, q.a}, kj, ki, kb, mesh);
}

cplx mp3_amplitude(const AmpContext& ctx, const MonkhorstPackMesh& mesh, const Quadruple& q,
                   const Frac3& ki, const Frac3& kj, const Frac3& ka) {
  ExactAmplitude s{ExactAmplitude::Tag::mp2, &ctx};
  cplx value{};
  for (const CatalogEntry& entry : amplitude_catalog()) {
    if (term_is_quadratic(entry.id)) continue;
    cplx v = term_evaluate(ctx, entry.id, s, q, ki, kj, ka, mesh);
    if (entry.permuted) v += term_evaluate_permuted(ctx, entry.id, s, q, ki, kj, ka, mesh);
    value += entry.coefficient * v;
  }
  return value;
}

}  // namespace ccdfse
