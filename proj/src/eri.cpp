#include "eri.hpp"

#include <cblas.h>

#include <mutex>
#include <unordered_map>

namespace ccdfse {

namespace {
struct PairKeyHash {
  size_t operator()(const std::tuple<int, Frac3, int, Frac3>& k) const {
    Frac3Hash fh;
    size_t h = fh(std::get<1>(k)) * 1099511628211ull + fh(std::get<3>(k));
    h ^= static_cast<size_t>(std::get<0>(k)) * 0x9e3779b97f4a7c15ull;
    h ^= static_cast<size_t>(std::get<2>(k)) * 0xc2b2ae3d27d4eb4full;
    return h;
  }
};
}  // namespace

// One LRU shard: map from pair key to a shared entry, plus an eviction list.
struct EriEngine::Shard {
  using Key = std::tuple<int, Frac3, int, Frac3>;
  std::mutex mutex;
  std::unordered_map<Key, std::pair<std::shared_ptr<const void>, std::list<Key>::iterator>,
                     PairKeyHash>
      map;
  std::list<Key> order;  // front = most recent
  size_t bytes = 0;

  template <typename T>
  std::shared_ptr<const T> get(const Key& key) {
    std::lock_guard<std::mutex> lock(mutex);
    auto it = map.find(key);
    if (it == map.end()) return nullptr;
    order.splice(order.begin(), order, it->second.second);
    return std::static_pointer_cast<const T>(it->second.first);
  }

  template <typename T>
  void put(const Key& key, std::shared_ptr<const T> value, size_t entry_bytes, size_t budget) {
    std::lock_guard<std::mutex> lock(mutex);
    if (map.count(key)) return;  // first insert wins
    while (bytes + entry_bytes > budget && !order.empty()) {
      auto victim = order.back();
      order.pop_back();
      map.erase(victim);
      bytes -= entry_bytes;  // entries in one shard are same-sized
    }
    order.push_front(key);
    map.emplace(key, std::make_pair(std::static_pointer_cast<const void>(value), order.begin()));
    bytes += entry_bytes;
  }
};

EriEngine::EriEngine(const ModelSystem& system, size_t cache_budget_bytes)
    : sys_(&system), budget_(cache_budget_bytes) {
  int n = sys_->basis().per_dim;
  half_ = n / 2 + 1;
  // Smallest nice FFT length with the window alias-free: L - (n-1) > half.
  corr_L_ = fft_nice_size(n - 1 + half_ + 1);
  shards_ = std::make_unique<Shard[]>(kShards);
  spectrum_shards_ = std::make_unique<Shard[]>(kShards);
}

EriEngine::~EriEngine() = default;

std::shared_ptr<const FftBuf> EriEngine::orbital_spectrum(int band, const Frac3& k) const {
  Frac3 folded;
  for (int d = 0; d < 3; ++d) folded[d] = k[d].mod1();
  Shard::Key key{band, folded, -1, Frac3{}};
  PairKeyHash h;
  Shard& shard = spectrum_shards_[h(key) % kShards];
  if (auto hit = shard.get<FftBuf>(key)) return hit;
  const BandStates& st = sys_->bands(folded);
  size_t total = static_cast<size_t>(corr_L_) * corr_L_ * corr_L_;
  auto spec = std::make_shared<FftBuf>(total);
  cube_spectrum(st.coefficients.col(band).data(), sys_->basis().per_dim, corr_L_,
                spec->data());
  // Spectrum shard budget: a quarter of the total.
  shard.put(key, std::static_pointer_cast<const FftBuf>(spec), total * sizeof(cplx),
            budget_ / 4 / kShards);
  return spec;
}

PairWindow EriEngine::window_from_spectra(const FftBuf& bra, const FftBuf& ket) const {
  size_t total = static_cast<size_t>(corr_L_) * corr_L_ * corr_L_;
  thread_local FftBuf scratch;
  if (scratch.size() != total) scratch = FftBuf(total);
  PairWindow win;
  win.half = half_;
  int w = 2 * half_ + 1;
  win.values.resize(static_cast<size_t>(w) * w * w);
  correlation_window(bra.data(), ket.data(), corr_L_, half_, win.values.data(), scratch.data());
  return win;
}

std::shared_ptr<const PairWindow> EriEngine::compute_window(int n_bra, const Frac3& k_bra,
                                                            int n_ket, const Frac3& k_ket) const {
  auto bra = orbital_spectrum(n_bra, k_bra);
  auto ket = orbital_spectrum(n_ket, k_ket);
  return std::make_shared<PairWindow>(window_from_spectra(*bra, *ket));
}

std::shared_ptr<const PairWindow> EriEngine::pair_window(int band_bra, const Frac3& k_bra,
                                                         int band_ket, const Frac3& k_ket) const {
  Frac3 fb, fk;
  for (int d = 0; d < 3; ++d) {
    fb[d] = k_bra[d].mod1();
    fk[d] = k_ket[d].mod1();
  }
  Shard::Key key{band_bra, fb, band_ket, fk};
  PairKeyHash h;
  Shard& shard = shards_[h(key) % kShards];
  if (auto hit = shard.get<PairWindow>(key)) return hit;
  auto win = compute_window(band_bra, fb, band_ket, fk);
  size_t entry_bytes = win->values.size() * sizeof(cplx) + 128;
  shard.put(key, win, entry_bytes, budget_ * 3 / 4 / kShards);
  return win;
}

std::vector<cplx> EriEngine::pair_density(int band_bra, const Frac3& k_bra, int band_ket,
                                          const Frac3& k_ket) const {
  auto win = pair_window(band_bra, k_bra, band_ket, k_ket);
  const auto& gs = sys_->basis().g_vectors;
  std::vector<cplx> out(gs.size());
  for (size_t i = 0; i < gs.size(); ++i) out[i] = win->at(gs[i][0], gs[i][1], gs[i][2]);
  return out;
}

bool momentum_conserving(const EriKey& key) {
  Frac3 sum = (key.k1 + key.k2) - (key.k3 + key.k4);
  for (int d = 0; d < 3; ++d)
    if (!sum[d].is_integer()) return false;
  return true;
}

std::vector<double> EriEngine::kernel_weights(const Vec3& q_frac) const {
  const auto& gs = sys_->basis().g_vectors;
  const ReciprocalCell& rec = sys_->reciprocal();
  std::vector<double> w(gs.size());
  double pref = 4.0 * M_PI / sys_->cell().volume;
  for (size_t i = 0; i < gs.size(); ++i) {
    Vec3 p = rec.cartesian(Vec3{q_frac[0] + gs[i][0], q_frac[1] + gs[i][1], q_frac[2] + gs[i][2]});
    double p2 = norm2(p);
    w[i] = (std::sqrt(p2) < 1e-10) ? 0.0 : pref / p2;
  }
  return w;
}

cplx EriEngine::eri(const EriKey& key) const {
  if (!momentum_conserving(key)) throw Error("eri: key violates crystal momentum conservation");
  // Canonical momentum transfer: q = fold(k3 - k1) in [0,1)^3.
  Frac3 q;
  Int3 s1{}, s2{};
  for (int d = 0; d < 3; ++d) {
    std::int64_t sh = 0;
    q[d] = (key.k3[d] - key.k1[d]).mod1(&sh);
    // Window shifts: k1 + q = k3 + S1 and k2 - q = k4 + S2 as exact integers.
    Frac a = key.k1[d].mod1() + q[d] - key.k3[d].mod1();
    Frac b = key.k2[d].mod1() - q[d] - key.k4[d].mod1();
    if (!a.is_integer() || !b.is_integer()) throw Error("eri: internal shift not integral");
    s1[d] = static_cast<int>(a.num);
    s2[d] = static_cast<int>(b.num);
  }
  auto w13 = pair_window(key.n1, key.k1, key.n3, key.k3);
  auto w24 = pair_window(key.n2, key.k2, key.n4, key.k4);

  const auto& gs = sys_->basis().g_vectors;
  const ReciprocalCell& rec = sys_->reciprocal();
  Vec3 qf{q[0].value(), q[1].value(), q[2].value()};
  double pref = 4.0 * M_PI / sys_->cell().volume;
  std::vector<cplx> terms(gs.size());
  for (size_t i = 0; i < gs.size(); ++i) {
    const Int3& g = gs[i];
    Vec3 p = rec.cartesian(Vec3{qf[0] + g[0], qf[1] + g[1], qf[2] + g[2]});
    double p2 = norm2(p);
    if (std::sqrt(p2) < 1e-10) {
      terms[i] = 0.0;
      continue;
    }
    cplx bra = w13->at(g[0] - s1[0], g[1] - s1[1], g[2] - s1[2]);
    cplx ket = w24->at(-g[0] - s2[0], -g[1] - s2[1], -g[2] - s2[2]);
    terms[i] = pref * bra * ket / p2;
  }
  return pairwise_sum(terms.data(), static_cast<std::int64_t>(terms.size()));
}

cplx EriEngine::antisymmetrized(int i, const Frac3& ki, int j, const Frac3& kj, int a,
                                const Frac3& ka, int b, const Frac3& kb) const {
  cplx direct = eri(EriKey{i, j, a, b, ki, kj, ka, kb});
  cplx exchange = eri(EriKey{i, j, b, a, ki, kj, kb, ka});
  return 2.0 * direct - exchange;
}

size_t EriEngine::cache_bytes() const {
  size_t total = 0;
  for (int s = 0; s < kShards; ++s) {
    std::lock_guard<std::mutex> l1(shards_[s].mutex);
    total += shards_[s].bytes;
  }
  for (int s = 0; s < kShards; ++s) {
    std::lock_guard<std::mutex> l2(spectrum_shards_[s].mutex);
    total += spectrum_shards_[s].bytes;
  }
  return total;
}

void eri_class_matrix(const EriEngine& eri, const MonkhorstPackMesh& mesh, int q_index, int n1,
                      int n2, int n3, int n4, cplx* out) {
  const ModelSystem& sys = eri.system();
  const auto& gs = sys.basis().g_vectors;
  const int NG = static_cast<int>(gs.size());
  const int N = mesh.n_k;
  MeshOps ops(mesh);
  Int3 jq = ops.dec(q_index);
  Vec3 qf{double(jq[0]) / ops.m, double(jq[1]) / ops.m, double(jq[2]) / ops.m};
  std::vector<double> w = eri.kernel_weights(qf);

  std::vector<cplx> P(static_cast<size_t>(N) * NG), Q(static_cast<size_t>(NG) * N);
  for (int r = 0; r < N; ++r) {
    int k3 = ops.add(r, q_index);
    Int3 jr = ops.dec(r);
    Int3 s1{(jr[0] + jq[0]) / ops.m, (jr[1] + jq[1]) / ops.m, (jr[2] + jq[2]) / ops.m};
    auto win = eri.pair_window(n1, mesh.at(r).fractional, n3, mesh.at(k3).fractional);
    cplx* row = &P[static_cast<size_t>(r) * NG];
    for (int g = 0; g < NG; ++g)
      row[g] = w[static_cast<size_t>(g)] *
               win->at(gs[static_cast<size_t>(g)][0] - s1[0], gs[static_cast<size_t>(g)][1] - s1[1],
                       gs[static_cast<size_t>(g)][2] - s1[2]);
  }
  for (int c = 0; c < N; ++c) {
    int k4 = ops.sub(c, q_index);
    Int3 jc = ops.dec(c);
    Int3 s2{jc[0] - jq[0] < 0 ? -1 : 0, jc[1] - jq[1] < 0 ? -1 : 0, jc[2] - jq[2] < 0 ? -1 : 0};
    auto win = eri.pair_window(n2, mesh.at(c).fractional, n4, mesh.at(k4).fractional);
    for (int g = 0; g < NG; ++g)
      Q[static_cast<size_t>(g) * N + c] =
          win->at(-gs[static_cast<size_t>(g)][0] - s2[0], -gs[static_cast<size_t>(g)][1] - s2[1],
                  -gs[static_cast<size_t>(g)][2] - s2[2]);
  }
  cplx one(1, 0), zero(0, 0);
  cblas_zgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, N, N, NG, &one, P.data(), NG, Q.data(),
              N, &zero, out, N);
}

void EriEngine::clear_cache() const {
  for (int s = 0; s < kShards; ++s) {
    {
      std::lock_guard<std::mutex> l(shards_[s].mutex);
      shards_[s].map.clear();
      shards_[s].order.clear();
      shards_[s].bytes = 0;
    }
    std::lock_guard<std::mutex> l(spectrum_shards_[s].mutex);
    spectrum_shards_[s].map.clear();
    spectrum_shards_[s].order.clear();
    spectrum_shards_[s].bytes = 0;
  }
}

}  // namespace ccdfse
