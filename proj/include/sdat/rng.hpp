#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace sdat {

// splitmix64 step (Steele, Lea, Flood 2014). Used for seeding xoshiro state
// and for deriving child streams.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Child stream derivation: splitmix64 applied to parent XOR golden*(index+1).
// Multiplication by an odd constant is a bijection mod 2^64 and the splitmix
// finalizer is a bijection, so distinct indices give distinct child seeds.
inline std::uint64_t child_seed(std::uint64_t parent, std::uint64_t index) {
  std::uint64_t s = parent ^ (0x9E3779B97F4A7C15ull * (index + 1));
  return splitmix64_next(s);
}

// xoshiro256++ (Blackman & Vigna 2019). Fixed generator for the whole repo:
// identical seeds give identical sequences on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64_next(sm);
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53 random bits.
  double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  // Standard normal via Box-Muller (cosine branch only; two uniforms per draw
  // so the stream layout is position-independent).
  double normal() {
    const double u1 = 1.0 - u01();  // (0, 1]
    const double u2 = u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n) via the multiply-high mapping (Lemire 2019,
  // without the rejection step; bias < n / 2^64 is irrelevant at desk scale).
  std::int64_t uniform_int(std::int64_t n) {
    const unsigned __int128 wide =
        static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n);
    return static_cast<std::int64_t>(wide >> 64);
  }

  // Fisher-Yates.
  template <class It>
  void shuffle(It first, It last) {
    const std::int64_t n = last - first;
    for (std::int64_t i = n - 1; i > 0; --i) {
      const std::int64_t j = uniform_int(i + 1);
      std::swap(first[i], first[j]);
    }
  }

  std::array<std::uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

 private:
  static constexpr double kTwoPi = 6.283185307179586476925286766559;

  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<std::uint64_t, 4> state_{};
};

}  // namespace sdat
