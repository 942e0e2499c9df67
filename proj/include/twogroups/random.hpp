#pragma once

#include <cstdint>
#include <limits>

namespace twogroups {

// SplitMix64. Small state, so one engine per unit or replication is cheap;
// satisfies UniformRandomBitGenerator for the <random> distributions.
class SplitMix64 {
public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

private:
  std::uint64_t state_;
};

// Seed of the independent substream `index` under `seed`. Streams depend only on
// (seed, index), never on evaluation order or worker count.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t salt = 0) {
  SplitMix64 a(seed ^ (salt * 0xd1b54a32d192ed03ULL));
  const std::uint64_t base = a();
  SplitMix64 b(base + index * 0x9e3779b97f4a7c15ULL);
  b();
  return b();
}

}  // namespace twogroups
