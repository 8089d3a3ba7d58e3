#pragma once

#include <cstdint>
#include <random>

namespace msconv {

// Seeded generator with portable derived distributions (the standard
// library's distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next() { return engine_(); }
  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool coin() { return (next() >> 63) != 0; }
  double normal();

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

// Independent stream for (seed, index), e.g. per training iteration.
Rng derive_rng(std::uint64_t seed, std::uint64_t index);

}  // namespace msconv
