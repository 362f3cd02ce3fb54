#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace sar2rgb {

/// Seeded generator shared by every stochastic component. The full state
/// (engine plus cached normal deviate) round-trips through serialize().
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return normal_(engine_); }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  std::mt19937_64& engine() { return engine_; }

  std::string serialize() const;
  void deserialize(const std::string& state);

  /// Independent stream derived from a base seed and an index (splitmix64).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t index);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace sar2rgb
