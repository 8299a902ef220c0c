#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace scca {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash_string(std::string_view s);

// Portable random stream: mt19937_64 plus hand-written uniform/normal draws so
// results do not depend on the standard library's distribution classes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}

  // Stream for element `index` of a collection seeded by `seed`.
  static Rng derive(std::uint64_t seed, std::uint64_t index) {
    return Rng(splitmix64(seed) + 0x9E3779B97F4A7C15ULL * (index + 1));
  }

  std::uint64_t next() { return engine_(); }
  double uniform();                          // [0, 1)
  double uniform(double lo, double hi);      // [lo, hi)
  double normal();                           // N(0, 1)
  std::size_t below(std::size_t n);          // [0, n)
  bool bernoulli(double p) { return uniform() < p; }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace scca
