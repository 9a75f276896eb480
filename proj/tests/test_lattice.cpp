#include <doctest.h>

#include "lattice.hpp"

using namespace ccdfse;

namespace {
const UnitCell kCell = UnitCell::cubic(1.0);
constexpr double kPi = M_PI;
}  // namespace

TEST_CASE("reciprocal cell satisfies the duality relations") {
  ReciprocalCell rec = make_reciprocal(kCell);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double d = dot(rec.reciprocal_vectors[i], kCell.lattice_vectors[j]);
      CHECK(d == doctest::Approx(i == j ? 2 * kPi : 0.0).epsilon(1e-12));
    }
  CHECK(rec.volume * kCell.volume == doctest::Approx(std::pow(2 * kPi, 3)).epsilon(1e-12));
}

TEST_CASE("build_mp_mesh basics") {
  CHECK_THROWS(build_mp_mesh(kCell, 0, MeshScheme::gamma_centered));

  auto m1 = build_mp_mesh(kCell, 1, MeshScheme::gamma_centered);
  REQUIRE(m1.n_k == 1);
  CHECK(m1.at(0).fractional == Frac3{Frac(0, 1), Frac(0, 1), Frac(0, 1)});

  auto m2 = build_mp_mesh(kCell, 2, MeshScheme::gamma_centered);
  REQUIRE(m2.n_k == 8);
  for (const auto& p : m2.points)
    for (int d = 0; d < 3; ++d)
      CHECK((p.fractional[d] == Frac(0, 1) || p.fractional[d] == Frac(1, 2)));
  // cartesian values {0, pi}
  CHECK(m2.points.back().cartesian[2] == doctest::Approx(kPi));

  auto off = build_mp_mesh(kCell, 2, MeshScheme::mp_offset);
  for (const auto& p : off.points)
    for (int d = 0; d < 3; ++d)
      CHECK((p.fractional[d] == Frac(1, 4) || p.fractional[d] == Frac(3, 4)));
}

TEST_CASE("index_of inverts point construction") {
  for (auto scheme : {MeshScheme::gamma_centered, MeshScheme::mp_offset}) {
    auto mesh = build_mp_mesh(kCell, 3, scheme);
    for (int i = 0; i < mesh.n_k; ++i) {
      auto idx = mesh.index_of(mesh.at(i).fractional);
      REQUIRE(idx.has_value());
      CHECK(*idx == i);
    }
    CHECK(!mesh.index_of(Frac3{Frac(1, 7), Frac(0, 1), Frac(0, 1)}).has_value());
  }
}

TEST_CASE("fold_to_bz examples") {
  ReciprocalCell rec = make_reciprocal(kCell);
  // (0,0,-pi): fractional (0,0,-1/2) -> (0,0,1/2) with shift (0,0,-1)
  auto [p1, g1] = fold_to_bz(rec, Frac3{Frac(0, 1), Frac(0, 1), Frac(-1, 2)});
  CHECK(p1.fractional[2] == Frac(1, 2));
  CHECK(p1.cartesian[2] == doctest::Approx(kPi));
  CHECK(g1 == Int3{0, 0, -1});

  auto [p2, g2] = fold_to_bz(rec, Frac3{Frac(0, 1), Frac(0, 1), Frac(0, 1)});
  CHECK(p2.fractional[2] == Frac(0, 1));
  CHECK(g2 == Int3{0, 0, 0});

  // 5*pi/2 -> fractional 5/4 -> 1/4 with shift 1
  auto [p3, g3] = fold_to_bz(rec, Frac3{Frac(5, 4), Frac(0, 1), Frac(0, 1)});
  CHECK(p3.fractional[0] == Frac(1, 4));
  CHECK(p3.cartesian[0] == doctest::Approx(kPi / 2));
  CHECK(g3 == Int3{1, 0, 0});

  // Idempotent and exact on rationals.
  auto [p4, g4] = fold_to_bz(rec, p3.fractional);
  CHECK(p4.fractional == p3.fractional);
  CHECK(g4 == Int3{0, 0, 0});
}

TEST_CASE("conserve_momentum stays on mesh for all triples (m <= 3)") {
  ReciprocalCell rec = make_reciprocal(kCell);
  for (auto scheme : {MeshScheme::gamma_centered, MeshScheme::mp_offset}) {
    for (int m = 1; m <= 3; ++m) {
      auto mesh = build_mp_mesh(kCell, m, scheme);
      for (int a = 0; a < mesh.n_k; ++a)
        for (int b = 0; b < mesh.n_k; ++b)
          for (int c = 0; c < mesh.n_k; ++c) {
            KPoint kb = conserve_momentum(rec, mesh.at(a), mesh.at(b), mesh.at(c));
            CHECK(mesh.index_of(kb.fractional).has_value());
          }
    }
  }
}

TEST_CASE("conserve_momentum simple values") {
  ReciprocalCell rec = make_reciprocal(kCell);
  KPoint gamma(Frac3{Frac(0, 1), Frac(0, 1), Frac(0, 1)}, rec);
  KPoint kz(Frac3{Frac(0, 1), Frac(0, 1), Frac(1, 2)}, rec);
  // fold(0 + 0 - (0,0,pi)) = (0,0,pi)
  KPoint kb = conserve_momentum(rec, gamma, gamma, kz);
  CHECK(kb.fractional == kz.fractional);
  KPoint kg = conserve_momentum(rec, gamma, gamma, gamma);
  CHECK(kg.fractional == gamma.fractional);
}

TEST_CASE("induced q mesh is Gamma-centered and contains zero") {
  for (auto scheme : {MeshScheme::gamma_centered, MeshScheme::mp_offset}) {
    auto mesh = build_mp_mesh(kCell, 2, scheme);
    auto q = induced_q_mesh(kCell, mesh);
    CHECK(q.scheme == MeshScheme::gamma_centered);
    CHECK(q.n_k == mesh.n_k);
    CHECK(q.index_of(Frac3{Frac(0, 1), Frac(0, 1), Frac(0, 1)}).has_value());
    // Every pairwise difference folds onto the induced mesh.
    ReciprocalCell rec = make_reciprocal(kCell);
    for (const auto& p1 : mesh.points)
      for (const auto& p2 : mesh.points) {
        auto [d, g] = fold_to_bz(rec, p1.fractional - p2.fractional);
        (void)g;
        CHECK(q.index_of(d.fractional).has_value());
      }
  }
  auto m1 = build_mp_mesh(kCell, 1, MeshScheme::mp_offset);
  auto q1 = induced_q_mesh(kCell, m1);
  CHECK(q1.n_k == 1);
  CHECK(q1.at(0).fractional == Frac3{Frac(0, 1), Frac(0, 1), Frac(0, 1)});
}

TEST_CASE("MeshOps integer arithmetic matches rational folding") {
  ReciprocalCell rec = make_reciprocal(kCell);
  for (auto scheme : {MeshScheme::gamma_centered, MeshScheme::mp_offset}) {
    auto mesh = build_mp_mesh(kCell, 3, scheme);
    MeshOps ops(mesh);
    for (int a = 0; a < mesh.n_k; ++a)
      for (int b = 0; b < mesh.n_k; ++b)
        for (int c = 0; c < mesh.n_k; ++c) {
          KPoint kb = conserve_momentum(rec, mesh.at(a), mesh.at(b), mesh.at(c));
          CHECK(*mesh.index_of(kb.fractional) == ops.comb(a, b, c));
        }
  }
}

TEST_CASE("frac parsing and dyadic reconstruction") {
  CHECK(parse_frac("1/2") == Frac(1, 2));
  CHECK(parse_frac("-3/4") == Frac(-3, 4));
  CHECK(parse_frac("2") == Frac(2, 1));
  CHECK_THROWS(parse_frac("x"));
  CHECK(frac_from_double(0.375) == Frac(3, 8));
  CHECK(frac_from_double(-2.0) == Frac(-2, 1));
}
