#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace fedmoe {

// Error taxonomy shared by all modules. Everything derives from
// std::runtime_error so callers that don't care can catch one type.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InternalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// splitmix64 finalizer. Used both as a seed scrambler and as the mixing
// step of derive_seed.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic seed derivation: every experiment sub-stream gets its seed
// from (master seed, path of identifiers). The same path always yields the
// same seed; distinct paths yield distinct seeds in practice.
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix64(base);
  for (std::uint64_t p : path) {
    s = mix64(s ^ mix64(p ^ 0x632be59bd9b4e019ULL));
  }
  return s;
}

// Label used in seed paths so that streams with the same numeric ids but
// different roles cannot collide.
inline std::uint64_t seed_tag(const char* name) {
  // FNV-1a over the tag name.
  std::uint64_t h = 1469598103934665603ULL;
  for (const char* c = name; *c; ++c) {
    h = (h ^ static_cast<unsigned char>(*c)) * 1099511628211ULL;
  }
  return h;
}

// Deterministic RNG. The engine (mt19937_64) is fully specified by the
// standard; the distributions below are implemented here rather than taken
// from <random> so that streams are reproducible across standard library
// versions, which keeps experiment outputs byte-stable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(mix64(seed)) {}

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; second value cached.
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n), rejection sampled to avoid modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw InternalError("Rng::below called with n=0");
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  // Gamma(alpha, 1) via Marsaglia-Tsang; alpha < 1 handled by boosting.
  double gamma(double alpha) {
    if (alpha <= 0.0) throw InternalError("gamma requires alpha > 0");
    if (alpha < 1.0) {
      double u = uniform();
      while (u == 0.0) u = uniform();
      return gamma(alpha + 1.0) * std::pow(u, 1.0 / alpha);
    }
    double d = alpha - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double t = 1.0 + c * x;
      if (t <= 0.0) continue;
      double v = t * t * t;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 &&
          std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
        return d * v;
      }
    }
  }

  // Symmetric Dirichlet(alpha) over k components.
  std::vector<double> dirichlet(double alpha, int k) {
    std::vector<double> g(static_cast<std::size_t>(k));
    for (;;) {
      double sum = 0.0;
      for (auto& v : g) {
        v = gamma(alpha);
        sum += v;
      }
      if (sum > 0.0) {
        for (auto& v : g) v /= sum;
        return g;
      }
      // All-zero draw can happen for tiny alpha through underflow; redraw.
    }
  }

  // Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Sample `count` distinct elements from `pool` (partial Fisher-Yates on a
  // copy; pool order is not disturbed).
  std::vector<int> sample(const std::vector<int>& pool, std::size_t count) {
    if (count > pool.size()) {
      throw InternalError("sample: count exceeds pool size");
    }
    std::vector<int> copy = pool;
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t j = i + static_cast<std::size_t>(below(copy.size() - i));
      std::swap(copy[i], copy[j]);
    }
    copy.resize(count);
    return copy;
  }

 private:
  std::mt19937_64 eng_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

// Shortest round-trip formatting for doubles; keeps CSV output byte-stable
// and loss-free.
std::string fmt_double(double v);

// Largest-remainder integerization of `total * weights` (weights need not be
// normalized). Ties go to the lower index. Sum of the result equals `total`.
std::vector<long> largest_remainder(const std::vector<double>& weights,
                                    long total);

}  // namespace fedmoe
