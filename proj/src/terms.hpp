#pragma once

#include <optional>
#include <string_view>

#include "amplitudes.hpp"

namespace ccdfse {

// Individual diagram terms of the CCD energy and amplitude equations.
// Energy terms sum over mesh triples with 1/N^3; amplitude terms carry the
// 1/eps prefactor and a 1/N per internal momentum sum. Signs and the
// +-permutation operator live in the catalog, not in the term values.
enum class TermId {
  energy_direct,    // sum <IJ|AB> t_IJ^AB
  energy_exchange,  // sum <IJ|BA> t_IJ^AB
  constant,         // <AB|IJ>/eps
  lin_4h2p,         // <KL|IJ> t_KL^AB
  lin_2h4p,         // <AB|CD> t_IJ^CD
  lin_3h3p_ring,    // <AK|IC> t_KJ^CB
  lin_3h3p_xc1,     // <AK|CI> t_KJ^CB
  lin_3h3p_xc2,     // <AK|IC> t_KJ^BC
  lin_3h3p_xc3,     // <AK|CJ> t_KI^BC
  quad_4h2p,        // <KL|CD> t_IJ^CD t_KL^AB
  quad_3h3p_super,  // <LK|DC> t_IL^AD t_KJ^CB
  quad_3h3p_xa,     // <LK|CD> t_IL^AD t_KJ^CB
  quad_3h3p_xb,     // <LK|DC> t_IL^DA t_KJ^CB
  quad_3h3p_xc,     // <LK|CD> t_IL^DA t_KJ^CB
  quad_3h3p_bc1,    // <LK|DC> t_IL^AD t_KJ^BC
  quad_3h3p_bc2,    // <LK|CD> t_IL^AD t_KJ^BC
  quad_3h3p_bc3,    // <LK|DC> t_IL^DA t_KJ^BC
  quad_3h3p_cj,     // <LK|CD> t_JL^DA t_KI^BC
  quad_kvv_direct,  // <KL|CD> t_KL^AD t_IJ^CB
  quad_kvv_exchange,  // <KL|DC> t_KL^AD t_IJ^CB
  quad_koo_direct,  // <KL|CD> t_IL^CD t_KJ^AB
  quad_koo_exchange,  // <KL|DC> t_IL^CD t_KJ^AB
};

const char* term_name(TermId id);
std::optional<TermId> term_from_name(std::string_view name);
bool term_is_energy(TermId id);
bool term_is_quadratic(TermId id);

// One entry of the amplitude equation: coefficient * term, plus the
// (I<->J, A<->B) partner when `permuted` is set. Summing the whole catalog
// reproduces one application of the fixed-point map.
struct CatalogEntry {
  TermId id;
  double coefficient;
  bool permuted;
};
const std::vector<CatalogEntry>& amplitude_catalog();

// Evaluates a single diagram with the amplitude factors taken from the
// pointwise exact amplitude t. External momenta may be arbitrary; internal
// sums run over the mesh with conservation fixing dependent momenta.
// Accelerated paths are used where available; term_evaluate_generic always
// takes the straightforward nested-loop route.
cplx term_evaluate(const AmpContext& ctx, TermId id, const ExactAmplitude& t, const Quadruple& q,
                   const Frac3& ki, const Frac3& kj, const Frac3& ka,
                   const MonkhorstPackMesh& mesh);
cplx term_evaluate_generic(const AmpContext& ctx, TermId id, const ExactAmplitude& t,
                           const Quadruple& q, const Frac3& ki, const Frac3& kj, const Frac3& ka,
                           const MonkhorstPackMesh& mesh);

// The P-partner of an amplitude term (I<->J, A<->B at swapped externals).
cplx term_evaluate_permuted(const AmpContext& ctx, TermId id, const ExactAmplitude& t,
                            const Quadruple& q, const Frac3& ki, const Frac3& kj, const Frac3& ka,
                            const MonkhorstPackMesh& mesh);

}  // namespace ccdfse
