#include "sortrl/util.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <thread>

namespace sortrl {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t a,
                     uint64_t b) {
  uint64_t h = fnv1a64(tag);
  h = splitmix64(h ^ splitmix64(base));
  h = splitmix64(h ^ splitmix64(a ^ 0x5851f42d4c957f2dull));
  h = splitmix64(h ^ splitmix64(b ^ 0x14057b7ef767814full));
  return h;
}

uint64_t Rng::next_u64() {
  state_ += 0x9e3779b97f4a7c15ull;
  uint64_t x = state_;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double Rng::uniform() {
  // 53 random bits -> [0, 1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

int64_t Rng::uniform_int(int64_t n) {
  if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be > 0");
  // Rejection-free modulo is fine here; n is tiny relative to 2^64.
  return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n));
}

double Rng::gauss() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

bool Rng::bernoulli(double p_true) { return uniform() < p_true; }

namespace {
std::atomic<int> g_worker_cap{0};

int default_workers() {
  if (const char* env = std::getenv("SORTRL_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}
}  // namespace

int worker_count() {
  int cap = g_worker_cap.load(std::memory_order_relaxed);
  return cap > 0 ? cap : default_workers();
}

void set_worker_cap(int n) { g_worker_cap.store(n, std::memory_order_relaxed); }

void parallel_for_ranges(int64_t n,
                         const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  int workers = worker_count();
  if (workers <= 1 || n == 1) {
    fn(0, n);
    return;
  }
  int64_t nthreads = std::min<int64_t>(workers, n);
  int64_t chunk = (n + nthreads - 1) / nthreads;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(nthreads));
  std::exception_ptr err;
  std::atomic<bool> failed{false};
  for (int64_t t = 0; t < nthreads; ++t) {
    int64_t lo = t * chunk;
    int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        fn(lo, hi);
      } catch (...) {
        if (!failed.exchange(true)) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  parallel_for_ranges(n, [&fn](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) fn(i);
  });
}

void ensure_finite(std::span<const double> xs, const char* what) {
  for (double v : xs) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string("non-finite value produced by ") +
                               what);
    }
  }
}

}  // namespace sortrl
