#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace disagg {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seeded generator with hand-rolled distributions so that all draws are
// reproducible bit-for-bit for a given seed, independent of the standard
// library's distribution implementations. Child streams are derived
// deterministically from (seed, stream tag).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed) {
    std::uint64_t s = seed;
    engine_.seed(splitmix64(s));
  }

  // Derives an independent stream for (this seed, tag).
  Rng split(std::uint64_t tag) const { return Rng(mix(seed_, tag)); }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() {
    return (next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1] — safe as a log() argument.
  double uniform_pos() { return 1.0 - uniform(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Lemire-style rejection to avoid modulo bias.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    std::uint64_t l = static_cast<std::uint64_t>(m);
    if (l < n) {
      std::uint64_t t = -n % n;
      while (l < t) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        l = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  // Standard normal via the polar method, with one-value cache.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Gamma(shape, rate) by Marsaglia-Tsang, boosted for shape < 1.
  double gamma(double shape, double rate) {
    if (shape < 1.0) {
      const double u = uniform_pos();
      return gamma(shape + 1.0, rate) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_pos();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
    }
  }

  // Inverse-Gamma(shape, scale): 1/X with X ~ Gamma(shape, rate = scale).
  double inverse_gamma(double shape, double scale) {
    return 1.0 / gamma(shape, scale);
  }

  // Poisson(mean). Inversion for small means; for large means the count is
  // split recursively so the per-leaf inversion stays cheap and exact.
  long long poisson(double mean) {
    if (mean <= 0.0) return 0;
    if (mean < 30.0) {
      const double limit = std::exp(-mean);
      long long k = 0;
      double p = uniform_pos();
      while (p > limit) {
        p *= uniform_pos();
        ++k;
      }
      return k;
    }
    // Split via a gamma waiting-time step: with n = floor(0.875*mean),
    // G ~ Gamma(n, 1); if G <= mean the first n events fit and the
    // remainder is Poisson(mean - G), else the count is Binomial-free
    // recursion on a smaller mean (classic Ahrens-Dieter reduction).
    const long long n = static_cast<long long>(std::floor(0.875 * mean));
    const double g = gamma(static_cast<double>(n), 1.0);
    if (g <= mean) return n + poisson(mean - g);
    return binomial(n - 1, mean / g);
  }

  long long binomial(long long n, double p) {
    // Small n only (used by the Poisson reduction); plain inversion by trials
    // would be O(n), so split large n via the beta waiting-time reduction.
    if (n <= 0) return 0;
    if (p <= 0.0) return 0;
    if (p >= 1.0) return n;
    if (n < 64) {
      long long k = 0;
      for (long long t = 0; t < n; ++t)
        if (uniform() < p) ++k;
      return k;
    }
    const long long a = 1 + n / 2;
    const long long b = n - a + 1;
    const double x = beta(static_cast<double>(a), static_cast<double>(b));
    if (x >= p) return binomial(a - 1, p / x);
    return a + binomial(b - 1, (p - x) / (1.0 - x));
  }

  double beta(double a, double b) {
    const double x = gamma(a, 1.0);
    const double y = gamma(b, 1.0);
    return x / (x + y);
  }

 private:
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t s = a ^ (0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2));
    std::uint64_t r = splitmix64(s);
    s ^= b;
    return r ^ splitmix64(s);
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace disagg
