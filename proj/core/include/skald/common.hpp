// SPDX-License-Identifier: Apache-2.0
/**
 * @file   common.hpp
 * @brief  Shared error types, deterministic RNG and small numeric helpers.
 */

#ifndef SKALD_COMMON_HPP
#define SKALD_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace skald {

/// Base class for every error the toolkit throws.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

/// Invalid configuration or argument values, detected before any work starts.
class ConfigError : public Error {
public:
  explicit ConfigError(const std::string &msg) : Error(msg) {}
};

/// Bad or missing input data (files, manifests, malformed payloads).
class DataError : public Error {
public:
  explicit DataError(const std::string &msg) : Error(msg) {}
};

/// Shape or dimensionality mismatch between operands.
class DimensionError : public Error {
public:
  explicit DimensionError(const std::string &msg) : Error(msg) {}
};

/// Numerical failure (divergence, singular system).
class NumericError : public Error {
public:
  explicit NumericError(const std::string &msg) : Error(msg) {}
};

/// Minimal row-major double matrix used at module boundaries.
struct DMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;

  DMatrix() = default;
  DMatrix(int r, int c, double fill = 0.0) : rows(r), cols(c), v(size_t(r) * c, fill) {}

  double &operator()(int r, int c) { return v[size_t(r) * cols + c]; }
  double operator()(int r, int c) const { return v[size_t(r) * cols + c]; }
  std::span<double> row(int r) { return {v.data() + size_t(r) * cols, size_t(cols)}; }
  std::span<const double> row(int r) const { return {v.data() + size_t(r) * cols, size_t(cols)}; }
  size_t size() const { return v.size(); }
};

/**
 * Deterministic 64-bit generator (splitmix64 core).
 *
 * The standard <random> distributions are implementation-defined, so every
 * draw here is spelled out explicitly: identical seeds give identical
 * streams on any platform. All toolkit randomness flows through this.
 */
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be positive.
  int uniform_int(int n) {
    return int((unsigned __int128)(next_u64()) * (unsigned __int128)(uint64_t)n >> 64);
  }

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal() {
    double u1 = 1.0 - uniform(); // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Derive an independent stream seed; used to hand sub-tasks their own RNG.
  static uint64_t mix(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Fisher-Yates shuffle of an index vector.
  template <class T> void shuffle(std::vector<T> &xs) {
    for (int i = int(xs.size()) - 1; i > 0; --i) {
      int j = uniform_int(i + 1);
      std::swap(xs[size_t(i)], xs[size_t(j)]);
    }
  }

private:
  uint64_t state_;
};

/// FNV-1a 64-bit hash; stable across platforms. Used for config hashes
/// and data-derived seeds.
inline uint64_t fnv1a(const void *data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto *p = static_cast<const unsigned char *>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a(const std::string &s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

inline double log_sum_exp(std::span<const double> xs) {
  double m = -INFINITY;
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

} // namespace skald

#endif // SKALD_COMMON_HPP
