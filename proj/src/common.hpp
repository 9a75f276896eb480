#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ccdfse {

using cplx = std::complex<double>;
using Vec3 = std::array<double, 3>;
using Int3 = std::array<int, 3>;

inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline double norm2(const Vec3& a) { return dot(a, a); }

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ConfigError : Error {
  using Error::Error;
};
struct SolverError : Error {
  using Error::Error;
};
struct BudgetError : Error {
  using Error::Error;
};

// Global worker count for the parallel helpers below. Set once by the CLI /
// test main; defaults to the hardware count.
int num_threads();
void set_num_threads(int n);

// Runs fn(i) for i in [0, n) on the worker pool. Order of execution is
// unspecified; fn must not throw across tasks it does not own.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

// Deterministic sum: partial results are stored per item-block and combined
// with a fixed-shape pairwise tree, so the value is independent of the
// number of threads and of scheduling.
cplx parallel_sum(std::int64_t n, const std::function<cplx(std::int64_t)>& fn);

// Pairwise (tree) summation of a dense buffer; used everywhere a mesh sum is
// reduced so that results are reproducible.
cplx pairwise_sum(const cplx* v, std::int64_t n);
double pairwise_sum(const double* v, std::int64_t n);

// FNV-1a, used to stamp outputs with a config fingerprint.
std::uint64_t fnv1a(const std::string& s);
std::string hex64(std::uint64_t v);

inline constexpr const char* kArtifactVersion = "0.1.0";

}  // namespace ccdfse
