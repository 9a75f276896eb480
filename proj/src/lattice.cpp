#include "lattice.hpp"

#include <cmath>

namespace ccdfse {

namespace {
constexpr double kTwoPi = 2.0 * M_PI;

double det3(const std::array<Vec3, 3>& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}
}  // namespace

UnitCell UnitCell::cubic(double a) { return orthorhombic(a, a, a); }

UnitCell UnitCell::orthorhombic(double ax, double ay, double az) {
  UnitCell c;
  c.lattice_vectors = {Vec3{ax, 0, 0}, Vec3{0, ay, 0}, Vec3{0, 0, az}};
  c.volume = ax * ay * az;
  if (c.volume <= 0) throw Error("UnitCell: nonpositive volume");
  return c;
}

ReciprocalCell make_reciprocal(const UnitCell& cell) {
  double v = det3(cell.lattice_vectors);
  if (v <= 0) throw Error("make_reciprocal: cell volume must be positive");
  const auto& a = cell.lattice_vectors;
  auto cross = [](const Vec3& x, const Vec3& y) {
    return Vec3{x[1] * y[2] - x[2] * y[1], x[2] * y[0] - x[0] * y[2], x[0] * y[1] - x[1] * y[0]};
  };
  ReciprocalCell rec;
  Vec3 c0 = cross(a[1], a[2]), c1 = cross(a[2], a[0]), c2 = cross(a[0], a[1]);
  for (int i = 0; i < 3; ++i) {
    rec.reciprocal_vectors[0][i] = kTwoPi * c0[i] / v;
    rec.reciprocal_vectors[1][i] = kTwoPi * c1[i] / v;
    rec.reciprocal_vectors[2][i] = kTwoPi * c2[i] / v;
  }
  rec.volume = kTwoPi * kTwoPi * kTwoPi / v;
  return rec;
}

Vec3 ReciprocalCell::cartesian(const Frac3& f) const {
  return cartesian(Vec3{f[0].value(), f[1].value(), f[2].value()});
}

Vec3 ReciprocalCell::cartesian(const Vec3& f) const {
  Vec3 c{0, 0, 0};
  for (int i = 0; i < 3; ++i)
    for (int d = 0; d < 3; ++d) c[d] += f[i] * reciprocal_vectors[i][d];
  return c;
}

MonkhorstPackMesh build_mp_mesh(const UnitCell& cell, int m, MeshScheme scheme) {
  if (m < 1) throw Error("build_mp_mesh: m must be >= 1");
  ReciprocalCell rec = make_reciprocal(cell);
  MonkhorstPackMesh mesh;
  mesh.per_dim = m;
  mesh.scheme = scheme;
  mesh.n_k = m * m * m;
  mesh.points.reserve(static_cast<size_t>(mesh.n_k));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      for (int k = 0; k < m; ++k) {
        Frac3 f;
        if (scheme == MeshScheme::gamma_centered) {
          f = {Frac(i, m), Frac(j, m), Frac(k, m)};
        } else {
          f = {Frac(2 * i + 1, 2 * m), Frac(2 * j + 1, 2 * m), Frac(2 * k + 1, 2 * m)};
        }
        mesh.points.emplace_back(f, rec);
      }
  return mesh;
}

std::optional<int> MonkhorstPackMesh::index_of(const Frac3& f) const {
  int m = per_dim;
  int idx[3];
  for (int d = 0; d < 3; ++d) {
    // Solve f_d = (j + delta)/m for integer j in [0, m).
    Frac scaled = f[d] * Frac(m, 1);
    if (scheme == MeshScheme::mp_offset) scaled = scaled - Frac(1, 2);
    if (!scaled.is_integer()) return std::nullopt;
    std::int64_t j = scaled.num;
    if (j < 0 || j >= m) return std::nullopt;
    idx[d] = static_cast<int>(j);
  }
  return (idx[0] * m + idx[1]) * m + idx[2];
}

std::pair<KPoint, Int3> fold_to_bz(const ReciprocalCell& rec, const Frac3& k) {
  Frac3 folded;
  Int3 shift{};
  for (int d = 0; d < 3; ++d) {
    std::int64_t s = 0;
    folded[d] = k[d].mod1(&s);
    shift[d] = static_cast<int>(s);
  }
  return {KPoint(folded, rec), shift};
}

KPoint conserve_momentum(const ReciprocalCell& rec, const KPoint& ki, const KPoint& kj,
                         const KPoint& ka) {
  Frac3 sum = ki.fractional + kj.fractional - ka.fractional;
  return fold_to_bz(rec, sum).first;
}

MonkhorstPackMesh induced_q_mesh(const UnitCell& cell, const MonkhorstPackMesh& mesh) {
  // Differences of mesh points are multiples of 1/m regardless of the offset
  // convention, so the induced mesh is the Gamma-centered one.
  return build_mp_mesh(cell, mesh.per_dim, MeshScheme::gamma_centered);
}

}  // namespace ccdfse
