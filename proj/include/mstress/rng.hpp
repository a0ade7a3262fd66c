#pragma once
// Deterministic random number generation. Everything downstream (sampling,
// weight init, dropout, ensemble noise) draws from this generator, never from
// <random>, so that a seed reproduces bit-identical runs on any platform and
// checkpoints can restore mid-stream state exactly.
//
// Generator: xoshiro256++ seeded through splitmix64. Substreams are derived
// from (base_seed, stream_id) as splitmix64 applied to
// base_seed + stream_id * 0x9E3779B97F4A7C15, which decorrelates streams for
// distinct ids while keeping derivation a pure function of the pair.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>

namespace mstress {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) { reseed(seed); }

  static Rng substream(uint64_t base_seed, uint64_t stream_id) {
    return Rng(base_seed + stream_id * 0x9E3779B97F4A7C15ULL);
  }

  void reseed(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
    has_spare_ = false;
    spare_ = 0.0;
  }

  uint64_t next_u64() {
    auto rotl = [](uint64_t v, int k) { return (v << k) | (v >> (64 - k)); };
    uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 significant bits.
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // Uniform integer in [0, n). 128-bit multiply keeps the mapping exact and
  // avoids modulo bias for the n we use.
  uint64_t uniform_int(uint64_t n) {
    return uint64_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  // Standard normal via Box-Muller. The second deviate of each pair is cached
  // and is part of the serialized state.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates shuffle using uniform_int, deterministic for a given state.
  template <typename T>
  void shuffle(T& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // State words: four generator words, spare flag, spare payload bits.
  std::array<uint64_t, 6> state() const {
    return {s_[0], s_[1], s_[2], s_[3], has_spare_ ? 1ULL : 0ULL,
            std::bit_cast<uint64_t>(spare_)};
  }

  void restore(const std::array<uint64_t, 6>& w) {
    s_ = {w[0], w[1], w[2], w[3]};
    has_spare_ = w[4] != 0;
    spare_ = std::bit_cast<double>(w[5]);
  }

 private:
  std::array<uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mstress
