#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include <Eigen/Core>

namespace narmi {

/// SplitMix64 step: advances `state` and returns the mixed output.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Derives a child seed from a root seed and a path of stream identifiers.
/// The result depends only on its arguments, never on call order.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
  std::uint64_t state = root;
  std::uint64_t out = splitmix64(state);
  for (std::uint64_t id : path) {
    state = out ^ (id * 0xD6E8FEB86659FD93ULL);
    out = splitmix64(state);
  }
  return out;
}

/// FNV-1a over a byte string; used to turn names into stream identifiers.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Seeded generator. All stochastic code draws through this type so that a
/// seed fully determines every result.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() { return normal_(engine_); }

  bool bernoulli(double p) { return uniform() < p; }

  double chi_squared(double df) { return std::chi_squared_distribution<double>(df)(engine_); }

  /// Uniform integer in [0, n).
  Eigen::Index index(Eigen::Index n) {
    return static_cast<Eigen::Index>(std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_));
  }

  /// Child generator for an independent stream (chains, bootstrap workers).
  Rng split() { return Rng(splitmix_from(engine_())); }

 private:
  static std::uint64_t splitmix_from(std::uint64_t s) { return splitmix64(s); }

  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
};

}  // namespace narmi
