#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string_view>

namespace mail {

/// Splittable random source. Every stochastic component derives its own
/// stream from the experiment seed via split(), so adding draws in one
/// component never shifts the sequence seen by another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix(seed)), engine_(key_) {}

  Rng split(std::uint64_t stream) const { return Rng(mix(key_ ^ mix(stream + 0x9e3779b97f4a7c15ULL)), Tag{}); }

  Rng split(std::string_view label) const {
    // FNV-1a over the label.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : label) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return split(h);
  }

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }

  /// Inclusive range.
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  /// Normal truncated at two standard deviations (resampled, not clipped).
  double truncated_normal(double stddev) {
    for (;;) {
      const double x = normal(0.0, 1.0);
      if (x >= -2.0 && x <= 2.0) return x * stddev;
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <class It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  struct Tag {};
  Rng(std::uint64_t key, Tag) : key_(key), engine_(key) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::mt19937_64 engine_;
};

}  // namespace mail
