#pragma once

#include <optional>
#include <vector>

#include "common.hpp"
#include "frac.hpp"

namespace ccdfse {

// Real-space cell. Rows of lattice_vectors are the Bravais vectors a_i.
struct UnitCell {
  std::array<Vec3, 3> lattice_vectors;
  double volume = 0.0;

  static UnitCell cubic(double a);
  static UnitCell orthorhombic(double ax, double ay, double az);
};

// Reciprocal cell with rows b_i satisfying b_i . a_j = 2 pi delta_ij.
struct ReciprocalCell {
  std::array<Vec3, 3> reciprocal_vectors;
  double volume = 0.0;

  Vec3 cartesian(const Frac3& f) const;
  Vec3 cartesian(const Vec3& f) const;
};

ReciprocalCell make_reciprocal(const UnitCell& cell);

// A crystal momentum, stored as an exact fractional coordinate in [0,1)^3
// (after folding) together with its cartesian value.
struct KPoint {
  Frac3 fractional;
  Vec3 cartesian{};

  KPoint() = default;
  KPoint(const Frac3& f, const ReciprocalCell& rec) : fractional(f), cartesian(rec.cartesian(f)) {}
};

enum class MeshScheme { gamma_centered, mp_offset };

// Uniform Monkhorst-Pack mesh of m^3 points over the reciprocal cell,
// ordered lexicographically in fractional coordinates.
struct MonkhorstPackMesh {
  int per_dim = 0;
  MeshScheme scheme = MeshScheme::gamma_centered;
  std::vector<KPoint> points;
  int n_k = 0;

  // Exact index lookup; nullopt when k is not a mesh point.
  std::optional<int> index_of(const Frac3& f) const;
  const KPoint& at(int i) const { return points[static_cast<size_t>(i)]; }
};

MonkhorstPackMesh build_mp_mesh(const UnitCell& cell, int m, MeshScheme scheme);

// Folds k into the half-open cube [0,1)^3 (fractional). Returns the folded
// point and the integer shift G with k = folded + G.
std::pair<KPoint, Int3> fold_to_bz(const ReciprocalCell& rec, const Frac3& k);

// k_b = fold(k_i + k_j - k_a); lands on the mesh whenever the inputs do.
KPoint conserve_momentum(const ReciprocalCell& rec, const KPoint& ki, const KPoint& kj,
                         const KPoint& ka);

// The Gamma-centered mesh of pairwise differences {k - k'} (size m^3).
MonkhorstPackMesh induced_q_mesh(const UnitCell& cell, const MonkhorstPackMesh& mesh);

// Integer mod-m arithmetic on linear mesh indices. Folded sums and
// differences of mesh points reduce to component-wise arithmetic on integer
// grid coordinates for both mesh schemes.
struct MeshOps {
  int m;
  explicit MeshOps(const MonkhorstPackMesh& mesh) : m(mesh.per_dim) {}
  Int3 dec(int idx) const { return Int3{idx / (m * m), (idx / m) % m, idx % m}; }
  int wrap(int v) const {
    v %= m;
    return v < 0 ? v + m : v;
  }
  int comp(int x, int y, int z) const { return (wrap(x) * m + wrap(y)) * m + wrap(z); }
  int add(int a, int b) const {
    Int3 A = dec(a), B = dec(b);
    return comp(A[0] + B[0], A[1] + B[1], A[2] + B[2]);
  }
  int sub(int a, int b) const {
    Int3 A = dec(a), B = dec(b);
    return comp(A[0] - B[0], A[1] - B[1], A[2] - B[2]);
  }
  int neg(int a) const {
    Int3 A = dec(a);
    return comp(-A[0], -A[1], -A[2]);
  }
  // fold(a + b - c)
  int comb(int a, int b, int c) const {
    Int3 A = dec(a), B = dec(b), C = dec(c);
    return comp(A[0] + B[0] - C[0], A[1] + B[1] - C[1], A[2] + B[2] - C[2]);
  }
};

}  // namespace ccdfse
