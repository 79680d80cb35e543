#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sortrl {

// Deterministic 64-bit mixer used for seed derivation.
uint64_t splitmix64(uint64_t x);

// Derives a child seed from a base seed, a stage tag, and task indices.
// Identical inputs give identical seeds on every platform.
uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a = 0,
                     uint64_t b = 0);

// FNV-1a over a byte string; used for config hashes.
uint64_t fnv1a64(std::string_view bytes);

// Self-contained RNG: xoshiro-free, just splitmix64 stream. All
// distributions are hand-rolled so streams are reproducible across
// standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x9e3779b97f4a7c15ull)) {}

  uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [0, n).
  int64_t uniform_int(int64_t n);
  // Standard Gaussian via Box-Muller (two uniforms per pair, cached).
  double gauss();
  bool bernoulli(double p_true);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Global worker cap: SORTRL_THREADS env var if set, else hardware
// concurrency. Always >= 1.
int worker_count();
void set_worker_cap(int n);  // 0 restores the default

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks so
// writes to disjoint slots are race-free; results must not depend on
// chunk boundaries (callers keep reductions in fixed index order).
void parallel_for(int64_t n, const std::function<void(int64_t)>& fn);

// Chunked variant: fn(begin, end) per contiguous range.
void parallel_for_ranges(int64_t n,
                         const std::function<void(int64_t, int64_t)>& fn);

void ensure_finite(std::span<const double> xs, const char* what);

}  // namespace sortrl
