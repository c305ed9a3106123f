#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mile {

/// Derives an independent 64-bit seed for the stream `name` under `root`.
///
/// Streams are keyed by name rather than by draw order, so adding a new
/// consumer never shifts the values an existing stream produces.
std::uint64_t derive_seed(std::uint64_t root, std::string_view name) noexcept;

/// Deterministic random source over a 64-bit Mersenne Twister.
class Rng {
 public:
  using Engine = std::mt19937_64;

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// A stream named `name` split off the root seed.
  static Rng stream(std::uint64_t root, std::string_view name) {
    return Rng(derive_seed(root, name));
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_);
  }

  Engine& engine() noexcept { return engine_; }

 private:
  Engine engine_;
};

}  // namespace mile
