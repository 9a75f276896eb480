#include "common.hpp"

#include <cstdio>
#include <mutex>

namespace ccdfse {

namespace {
std::atomic<int> g_threads{0};
}

int num_threads() {
  int n = g_threads.load();
  if (n > 0) return n;
  n = static_cast<int>(std::thread::hardware_concurrency());
  return n > 0 ? n : 1;
}

void set_num_threads(int n) { g_threads.store(n > 0 ? n : 1); }

void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
  if (n <= 0) return;
  int nt = num_threads();
  if (nt <= 1 || n == 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::vector<std::thread> workers;
  std::atomic<bool> failed{false};
  std::string first_error;
  std::mutex err_mutex;
  auto body = [&] {
    for (;;) {
      std::int64_t i = next.fetch_add(1);
      if (i >= n || failed.load()) break;
      try {
        fn(i);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!failed.exchange(true)) first_error = e.what();
      }
    }
  };
  int spawn = static_cast<int>(std::min<std::int64_t>(nt, n));
  workers.reserve(spawn);
  for (int t = 0; t < spawn; ++t) workers.emplace_back(body);
  for (auto& w : workers) w.join();
  if (failed.load()) throw Error(first_error);
}

cplx pairwise_sum(const cplx* v, std::int64_t n) {
  if (n == 0) return {};
  if (n <= 8) {
    cplx s{};
    for (std::int64_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  std::int64_t h = n / 2;
  return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

double pairwise_sum(const double* v, std::int64_t n) {
  if (n == 0) return 0.0;
  if (n <= 8) {
    double s = 0;
    for (std::int64_t i = 0; i < n; ++i) s += v[i];
    return s;
  }
  std::int64_t h = n / 2;
  return pairwise_sum(v, h) + pairwise_sum(v + h, n - h);
}

cplx parallel_sum(std::int64_t n, const std::function<cplx(std::int64_t)>& fn) {
  if (n <= 0) return {};
  std::vector<cplx> partial(static_cast<size_t>(n));
  parallel_for(n, [&](std::int64_t i) { partial[static_cast<size_t>(i)] = fn(i); });
  return pairwise_sum(partial.data(), n);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace ccdfse
