#pragma once

#include <cstdint>

namespace senslab {

// SplitMix64; a cheap engine for short keyed streams.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

// Stream key for (seed, a, b). Distinct tuples give decorrelated streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  SplitMix64 g(seed);
  SplitMix64 ga(g() ^ (a * 0xd1342543de82ef95ULL));
  SplitMix64 gb(ga() ^ (b * 0xaf251af3b0f025b5ULL));
  return gb();
}

}  // namespace senslab
