#include "meanfield.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace ccdfse {

namespace {
constexpr double kTwoPi = 2.0 * M_PI;
}

PlanewaveBasis make_basis(int per_dim) {
  if (per_dim < 2 || per_dim % 2 != 0) throw Error("make_basis: per_dim must be even and >= 2");
  PlanewaveBasis b;
  b.per_dim = per_dim;
  int h = per_dim / 2;
  b.g_vectors.reserve(static_cast<size_t>(per_dim) * per_dim * per_dim);
  for (int x = -h; x < per_dim - h; ++x)
    for (int y = -h; y < per_dim - h; ++y)
      for (int z = -h; z < per_dim - h; ++z) b.g_vectors.push_back(Int3{x, y, z});
  return b;
}

static cplx gaussian_vhat(const PotentialSpec& spec, const UnitCell& cell,
                          const ReciprocalCell& rec, int gx, int gy, int gz) {
  Vec3 g = rec.cartesian(Vec3{static_cast<double>(gx), static_cast<double>(gy),
                              static_cast<double>(gz)});
  double quad = 0.5 * (spec.sigma2[0] * g[0] * g[0] + spec.sigma2[1] * g[1] * g[1] +
                       spec.sigma2[2] * g[2] * g[2]);
  double det = spec.sigma2[0] * spec.sigma2[1] * spec.sigma2[2];
  double amp = spec.strength / cell.volume * std::pow(kTwoPi, 1.5) * std::sqrt(det) *
               std::exp(-quad);
  double phase = -(g[0] * spec.center[0] + g[1] * spec.center[1] + g[2] * spec.center[2]);
  return amp * cplx(std::cos(phase), std::sin(phase));
}

std::vector<cplx> potential_fourier(const PotentialSpec& spec, const UnitCell& cell,
                                    const PlanewaveBasis& basis) {
  ReciprocalCell rec = make_reciprocal(cell);
  std::vector<cplx> v(basis.g_vectors.size());
  for (size_t i = 0; i < basis.g_vectors.size(); ++i) {
    const Int3& g = basis.g_vectors[i];
    v[i] = gaussian_vhat(spec, cell, rec, g[0], g[1], g[2]);
  }
  return v;
}

void fix_gauge(BandStates& states) {
  for (int c = 0; c < states.coefficients.cols(); ++c) {
    auto col = states.coefficients.col(c);
    Eigen::Index best = 0;
    double mag = -1.0;
    for (Eigen::Index r = 0; r < col.size(); ++r) {
      double m = std::abs(col[r]);
      if (m > mag + 1e-300 && m > mag * (1.0 + 1e-12)) {
        mag = m;
        best = r;
      }
    }
    if (mag < 1e-14) throw SolverError("fix_gauge: zero column (eigensolver failure)");
    cplx pivot = col[best];
    col *= std::conj(pivot) / std::abs(pivot);
    // Kill the residual imaginary part of the pivot entry exactly.
    col[best] = cplx(std::abs(col[best]), 0.0);
  }
}

ModelSystem::ModelSystem(const ModelConfig& cfg)
    : cfg_(cfg), rec_(make_reciprocal(cfg.cell)), basis_(make_basis(cfg.n_pw)) {
  vhat_ = potential_fourier(cfg_.potential, cfg_.cell, basis_);
  // Band-limited potential on a doubled grid; applying it pointwise in real
  // space realizes the exact linear convolution with V(G - G') over the full
  // difference range of the basis cube.
  pad_L_ = 2 * cfg_.n_pw;
  size_t total = static_cast<size_t>(pad_L_) * pad_L_ * pad_L_;
  FftBuf grid(total);
  grid.zero();
  int n = cfg_.n_pw;
  for (int x = -(n - 1); x <= n - 1; ++x)
    for (int y = -(n - 1); y <= n - 1; ++y)
      for (int z = -(n - 1); z <= n - 1; ++z)
        grid[padded_index(x, y, z, pad_L_)] = gaussian_vhat(cfg_.potential, cfg_.cell, rec_, x, y, z);
  fft3_backward(pad_L_, grid.data());
  // V(-G) = conj(V(G)) makes this real up to roundoff. The backward DFT here
  // is the unnormalized synthesis sum_G V(G) e^{+iGr}, which is exactly the
  // band-limited potential evaluated at grid points.
  v_real_.resize(total);
  for (size_t i = 0; i < total; ++i) v_real_[i] = grid[i].real();
}

void ModelSystem::apply_hamiltonian(const Vec3& k_cart, const cplx* x, cplx* y) const {
  int n = cfg_.n_pw;
  int L = pad_L_;
  size_t total = static_cast<size_t>(L) * L * L;
  thread_local FftBuf pad;
  if (pad.size() != total) pad = FftBuf(total);
  pad.zero();
  scatter_cube(x, n, pad.data(), L);
  fft3_backward(L, pad.data());
  for (size_t i = 0; i < total; ++i) pad[i] *= v_real_[i];
  fft3_forward(L, pad.data());
  double inv = 1.0 / static_cast<double>(total);
  const auto& gs = basis_.g_vectors;
  for (size_t i = 0; i < gs.size(); ++i) {
    Vec3 kg = rec_.cartesian(Vec3{static_cast<double>(gs[i][0]) , static_cast<double>(gs[i][1]),
                                  static_cast<double>(gs[i][2])});
    kg[0] += k_cart[0];
    kg[1] += k_cart[1];
    kg[2] += k_cart[2];
    double kin = 0.5 * norm2(kg);
    y[i] = kin * x[i] + pad[padded_index(gs[i][0], gs[i][1], gs[i][2], L)] * inv;
  }
}

BandStates ModelSystem::solve_dense(const KPoint& k) const {
  int n = basis_.size();
  Eigen::MatrixXcd H(n, n);
  for (int col = 0; col < n; ++col) {
    const Int3& gc = basis_.g_vectors[static_cast<size_t>(col)];
    for (int row = 0; row < n; ++row) {
      const Int3& gr = basis_.g_vectors[static_cast<size_t>(row)];
      H(row, col) = gaussian_vhat(cfg_.potential, cfg_.cell, rec_, gr[0] - gc[0], gr[1] - gc[1],
                                  gr[2] - gc[2]);
    }
    Vec3 kg = rec_.cartesian(Vec3{static_cast<double>(gc[0]), static_cast<double>(gc[1]),
                                  static_cast<double>(gc[2])});
    kg[0] += k.cartesian[0];
    kg[1] += k.cartesian[1];
    kg[2] += k.cartesian[2];
    H(col, col) += 0.5 * norm2(kg);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H);
  if (es.info() != Eigen::Success) throw SolverError("dense diagonalization failed");
  int nb = cfg_.n_bands();
  BandStates st;
  st.k = k;
  st.energies.assign(es.eigenvalues().data(), es.eigenvalues().data() + nb);
  st.coefficients = es.eigenvectors().leftCols(nb);
  fix_gauge(st);
  return st;
}

BandStates ModelSystem::solve_iterative(const KPoint& k) const {
  using Mat = Eigen::MatrixXcd;
  const int n = basis_.size();
  const int nb = cfg_.n_bands() + cfg_.extra_bands;
  if (nb >= n) return solve_dense(k);

  // Kinetic energies for the starting block and the preconditioner.
  std::vector<double> kin(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Int3& g = basis_.g_vectors[static_cast<size_t>(i)];
    Vec3 kg = rec_.cartesian(Vec3{static_cast<double>(g[0]), static_cast<double>(g[1]),
                                  static_cast<double>(g[2])});
    kg[0] += k.cartesian[0];
    kg[1] += k.cartesian[1];
    kg[2] += k.cartesian[2];
    kin[static_cast<size_t>(i)] = 0.5 * norm2(kg);
  }

  auto apply_block = [&](const Mat& in) {
    Mat out(n, in.cols());
    for (int c = 0; c < in.cols(); ++c)
      apply_hamiltonian(k.cartesian, in.col(c).data(), out.col(c).data());
    return out;
  };

  // Start from the lowest-kinetic planewaves (deterministic tie-break by
  // basis order).
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return kin[static_cast<size_t>(a)] < kin[static_cast<size_t>(b)]; });
  Mat X = Mat::Zero(n, nb);
  for (int c = 0; c < nb; ++c) X(order[static_cast<size_t>(c)], c) = 1.0;

  Mat HX = apply_block(X);
  Mat P(n, 0), HP(n, 0);
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(nb);

  auto ortho_block = [&](Mat& B, Mat& HB) {
    if (B.cols() == 0) return;
    Eigen::JacobiSVD<Mat> svd(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    double cutoff = std::max(sv(0) * 1e-10, 1e-100);
    int rank = 0;
    while (rank < sv.size() && sv(rank) > cutoff) ++rank;
    Mat T = svd.matrixV().leftCols(rank) * sv.head(rank).cwiseInverse().asDiagonal();
    B = B * T;
    HB = HB * T;
  };

  const double tol = cfg_.residual_tol;
  bool converged = false;
  double worst = 0;
  for (int iter = 0; iter < cfg_.max_iterations; ++iter) {
    // Rayleigh-Ritz within X.
    Mat xhx = X.adjoint() * HX;
    Eigen::SelfAdjointEigenSolver<Mat> small(0.5 * (xhx + xhx.adjoint()));
    X = X * small.eigenvectors();
    HX = HX * small.eigenvectors();
    theta = small.eigenvalues();

    Mat R = HX - X * theta.asDiagonal();
    worst = 0;
    for (int c = 0; c < cfg_.n_bands(); ++c) worst = std::max(worst, R.col(c).norm());
    double worst_extra = 0;
    for (int c = cfg_.n_bands(); c < nb; ++c) worst_extra = std::max(worst_extra, R.col(c).norm());
    if (worst <= tol && worst_extra <= std::max(tol, 1e-8)) {
      converged = true;
      break;
    }

    // Preconditioned residuals (inverse-kinetic, floor at 1).
    Mat W(n, nb);
    for (int c = 0; c < nb; ++c) {
      double shift = theta(c);
      for (int i = 0; i < n; ++i) {
        double d = kin[static_cast<size_t>(i)] - shift;
        if (d < 1.0) d = 1.0;
        W(i, c) = R(i, c) / d;
      }
    }

    // Re-orthonormalize P against X, then W against X and P; rank-deficient
    // directions are dropped.
    if (P.cols() > 0) {
      Mat proj = X.adjoint() * P;
      P.noalias() -= X * proj;
      HP.noalias() -= HX * proj;
      ortho_block(P, HP);
    }
    {
      Mat proj = X.adjoint() * W;
      W.noalias() -= X * proj;
      if (P.cols() > 0) {
        Mat pproj = P.adjoint() * W;
        W.noalias() -= P * pproj;
      }
      Mat dummy(n, W.cols());
      dummy.setZero();
      ortho_block(W, dummy);
    }
    if (W.cols() == 0) {
      converged = worst <= tol;
      break;
    }
    Mat HW = apply_block(W);

    // Rayleigh-Ritz over S = [X W P].
    int cw = static_cast<int>(W.cols()), cp = static_cast<int>(P.cols());
    int dim = nb + cw + cp;
    Mat S(n, dim), HS(n, dim);
    S << X, W, P;
    HS << HX, HW, HP;
    Mat A = S.adjoint() * HS;
    Mat B = S.adjoint() * S;
    Eigen::GeneralizedSelfAdjointEigenSolver<Mat> gev(0.5 * (A + A.adjoint()),
                                                      0.5 * (B + B.adjoint()));
    if (gev.info() != Eigen::Success) throw SolverError("LOBPCG subspace solve failed");
    Mat C = gev.eigenvectors().leftCols(nb);

    Mat Xn = S * C;
    Mat HXn = HS * C;
    Mat Cwp = C.bottomRows(cw + cp);
    Mat Swp(n, cw + cp), HSwp(n, cw + cp);
    Swp << W, P;
    HSwp << HW, HP;
    P = Swp * Cwp;
    HP = HSwp * Cwp;
    X = Xn;
    HX = HXn;
  }

  if (!converged && worst > tol) {
    char buf[160];
    std::snprintf(buf, sizeof(buf),
                  "eigensolver did not converge: residual %.3e after %d iterations (tol %.1e)",
                  worst, cfg_.max_iterations, tol);
    throw SolverError(buf);
  }

  BandStates st;
  st.k = k;
  int keep = cfg_.n_bands();
  st.energies.assign(theta.data(), theta.data() + keep);
  st.coefficients = X.leftCols(keep);
  if (cfg_.extra_bands > 0 && theta.size() > keep) {
    if (theta(keep) - theta(keep - 1) < 1e-6)
      std::fprintf(stderr,
                   "warning: near-degeneracy at band truncation edge (gap %.2e) at k=(%g,%g,%g)\n",
                   theta(keep) - theta(keep - 1), k.cartesian[0], k.cartesian[1], k.cartesian[2]);
  }
  fix_gauge(st);
  return st;
}

BandStates ModelSystem::solve_at(const KPoint& k) const {
  if (cfg_.force_dense || basis_.size() <= 512) return solve_dense(k);
  return solve_iterative(k);
}

const BandStates& ModelSystem::bands(const Frac3& fractional) const {
  Frac3 folded;
  for (int d = 0; d < 3; ++d) folded[d] = fractional[d].mod1();
  {
    std::lock_guard<std::mutex> lock(cache_mutex_);
    auto it = cache_.find(folded);
    if (it != cache_.end()) return *it->second;
  }
  auto states = std::make_unique<BandStates>(solve_at(KPoint(folded, rec_)));
  std::lock_guard<std::mutex> lock(cache_mutex_);
  auto [it, inserted] = cache_.try_emplace(folded, std::move(states));
  return *it->second;  // first computation wins; duplicates are discarded
}

const BandStates& ModelSystem::bands(const KPoint& k) const { return bands(k.fractional); }

size_t ModelSystem::cached_count() const {
  std::lock_guard<std::mutex> lock(cache_mutex_);
  return cache_.size();
}

namespace {
constexpr char kCacheMagic[8] = {'C', 'C', 'F', 'S', 'E', 'B', 'C', '1'};
}

void ModelSystem::save_band_cache(const std::string& path) const {
  std::lock_guard<std::mutex> lock(cache_mutex_);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open band cache for writing: " + path);
  out.write(kCacheMagic, 8);
  std::uint32_t version = 1, npw = static_cast<std::uint32_t>(cfg_.n_pw),
                nb = static_cast<std::uint32_t>(cfg_.n_bands());
  std::uint64_t count = cache_.size();
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&npw), 4);
  out.write(reinterpret_cast<const char*>(&nb), 4);
  out.write(reinterpret_cast<const char*>(&count), 8);
  // Deterministic record order: sort keys.
  std::vector<const Frac3*> keys;
  keys.reserve(cache_.size());
  for (const auto& [key, val] : cache_) keys.push_back(&key);
  std::sort(keys.begin(), keys.end(), [](const Frac3* a, const Frac3* b) {
    for (int d = 0; d < 3; ++d) {
      if ((*a)[d] != (*b)[d]) return (*a)[d] < (*b)[d];
    }
    return false;
  });
  for (const Frac3* key : keys) {
    const BandStates& st = *cache_.at(*key);
    for (int d = 0; d < 3; ++d) {
      std::int64_t num = (*key)[d].num, den = (*key)[d].den;
      out.write(reinterpret_cast<const char*>(&num), 8);
      out.write(reinterpret_cast<const char*>(&den), 8);
    }
    out.write(reinterpret_cast<const char*>(st.energies.data()),
              static_cast<std::streamsize>(st.energies.size() * sizeof(double)));
    out.write(reinterpret_cast<const char*>(st.coefficients.data()),
              static_cast<std::streamsize>(sizeof(cplx) * static_cast<size_t>(st.coefficients.size())));
  }
  if (!out) throw Error("band cache write failed: " + path);
}

size_t ModelSystem::load_band_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open band cache: " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, kCacheMagic, 8) != 0) throw Error("band cache: bad magic");
  std::uint32_t version = 0, npw = 0, nb = 0;
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&npw), 4);
  in.read(reinterpret_cast<char*>(&nb), 4);
  in.read(reinterpret_cast<char*>(&count), 8);
  if (version != 1) throw Error("band cache: unsupported version");
  if (static_cast<int>(npw) != cfg_.n_pw || static_cast<int>(nb) != cfg_.n_bands())
    throw Error("band cache: dimensions do not match this system");
  size_t loaded = 0;
  int n = basis_.size();
  for (std::uint64_t r = 0; r < count; ++r) {
    Frac3 key;
    for (int d = 0; d < 3; ++d) {
      std::int64_t num = 0, den = 1;
      in.read(reinterpret_cast<char*>(&num), 8);
      in.read(reinterpret_cast<char*>(&den), 8);
      key[d] = Frac(num, den);
    }
    auto st = std::make_unique<BandStates>();
    st->k = KPoint(key, rec_);
    st->energies.resize(static_cast<size_t>(nb));
    in.read(reinterpret_cast<char*>(st->energies.data()), nb * sizeof(double));
    st->coefficients.resize(n, nb);
    in.read(reinterpret_cast<char*>(st->coefficients.data()),
            static_cast<std::streamsize>(sizeof(cplx) * static_cast<size_t>(st->coefficients.size())));
    if (!in) throw Error("band cache: truncated file");
    std::lock_guard<std::mutex> lock(cache_mutex_);
    if (cache_.try_emplace(key, std::move(st)).second) ++loaded;
  }
  return loaded;
}

double direct_gap(const ModelSystem& system, const MonkhorstPackMesh& probe_mesh) {
  if (probe_mesh.points.empty()) throw Error("direct_gap: empty probe mesh");
  int nocc = system.config().n_occ;
  std::vector<double> gaps(probe_mesh.points.size());
  parallel_for(static_cast<std::int64_t>(probe_mesh.points.size()), [&](std::int64_t i) {
    const BandStates& st = system.bands(probe_mesh.points[static_cast<size_t>(i)]);
    gaps[static_cast<size_t>(i)] = st.energies[static_cast<size_t>(nocc)] -
                                   st.energies[static_cast<size_t>(nocc - 1)];
  });
  return *std::min_element(gaps.begin(), gaps.end());
}

}  // namespace ccdfse
