#pragma once

// Portable seeded randomness. The generator is xoshiro256** (Blackman and
// Vigna) with its state expanded from a 64-bit seed by splitmix64, so a seed
// reproduces the same stream in any language that implements the two
// published algorithms:
//
//   splitmix64, state 1234567: 6457827717110365317, 3203168211198807973, ...
//   xoshiro256**, state {1, 2, 3, 4}: 11520, 0, 1509978240, 1215971899390074240
//
// Derived quantities are defined on top of next_u64() only:
//   uniform()      = (next_u64() >> 11) * 2^-53, in [0, 1)
//   uniform_int(n) = rejection sampling on next_u64() below the largest
//                    multiple of n, then modulo n
//   gaussian()     = Marsaglia polar method, caching the second variate

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>

namespace prism {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t state) : state_(state) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& s : s_) s = sm.next();
  }

  static Rng from_state(const std::array<std::uint64_t, 4>& state) {
    Rng r(0);
    r.s_ = state;
    return r;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  // Fisher-Yates, drawing from the back.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<std::uint64_t, 4> s_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Sub-seeds for independent purposes inside one run are the run seed plus a
// fixed offset.
namespace seed_offset {
inline constexpr std::uint64_t kData = 0;
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kFixture = 3;
}  // namespace seed_offset

}  // namespace prism
