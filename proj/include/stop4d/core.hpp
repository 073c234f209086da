#pragma once

// Shared plumbing: error classes, the deterministic random stream, point keys,
// set IoU and a small parallel-for helper.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace stop4d {

using Vec3 = Eigen::Vector3d;

// ---------------------------------------------------------------------------
// Errors. Each class maps to one CLI exit code (see tools/stop4d.cpp).
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value; `key()` names the offending setting.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Malformed file or byte buffer.
struct FormatError : Error {
  using Error::Error;
};

/// A value does not fit the on-disk encoding (e.g. more than 65535 instances).
struct CapacityError : FormatError {
  using FormatError::FormatError;
};

/// Non-finite loss, gradient or parameter.
struct NumericError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Random stream
// ---------------------------------------------------------------------------

/// Deterministic random stream on top of std::mt19937_64, whose output
/// sequence is fixed by the C++ standard. The uniform and normal transforms
/// are implemented here rather than with std::*_distribution so that draws
/// agree across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (one value per call, the pair's second
  /// half is cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double mag = std::sqrt(-2.0 * std::log(u1));
    spare_ = mag * std::sin(2.0 * M_PI * u2);
    has_spare_ = true;
    return mag * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Child stream for an independent sub-task; deterministic in (state, tag).
  Rng fork(std::uint64_t tag) { return Rng(splitmix(next_u64() ^ splitmix(tag))); }

  static std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Rng seeded_rng(std::uint64_t seed) { return Rng(seed); }

// ---------------------------------------------------------------------------
// Point keys
// ---------------------------------------------------------------------------

/// (sequence scan id, point id within that scan).
struct PointKey {
  std::uint32_t scan = 0;
  std::uint32_t point = 0;

  std::uint64_t packed() const { return (std::uint64_t{scan} << 32) | point; }
  static PointKey unpack(std::uint64_t k) {
    return {static_cast<std::uint32_t>(k >> 32), static_cast<std::uint32_t>(k)};
  }
  auto operator<=>(const PointKey&) const = default;
};

/// |a ∩ b| for sorted, duplicate-free ranges.
template <class T>
std::size_t sorted_intersection_size(std::span<const T> a, std::span<const T> b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

/// IoU of two sorted, duplicate-free key ranges. Empty vs empty is 0.
template <class T>
double sorted_iou(std::span<const T> a, std::span<const T> b) {
  const std::size_t inter = sorted_intersection_size(a, b);
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// IoU of two point sets given in any order (duplicates ignored).
template <class T>
double point_set_iou(std::vector<T> a, std::vector<T> b) {
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  std::sort(b.begin(), b.end());
  b.erase(std::unique(b.begin(), b.end()), b.end());
  return sorted_iou<T>(a, b);
}

// ---------------------------------------------------------------------------
// Parallelism
// ---------------------------------------------------------------------------

/// Runs fn(i) for i in [0, n) on up to `threads` workers with a static
/// interleaved partition. fn must only write to slot i.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

inline int hardware_threads() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

}  // namespace stop4d
