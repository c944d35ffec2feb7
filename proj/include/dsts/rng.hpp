#pragma once

#include <array>
#include <cstdint>

namespace dsts {

// Deterministic xoshiro256++ generator with splitmix64 seeding.
//
// Everything that draws randomness in this project goes through Rng, never
// through <random> distributions, so streams are identical across platforms
// and standard libraries. The four-word state is serialized verbatim into
// checkpoints; resuming restores the stream mid-sequence.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  static Rng from_state(const std::array<uint64_t, 4>& s);
  const std::array<uint64_t, 4>& state() const { return s_; }

  uint64_t next_u64();

  // Uniform in [0,1), 53-bit resolution.
  double next_double();
  float next_float();

  // Uniform integer in [lo, hi). Requires lo < hi.
  int64_t uniform_int(int64_t lo, int64_t hi);

  // Standard normal via Box-Muller (cosine branch, one draw per two
  // uniforms). No cached spare, so consumption is position-independent.
  float normal();

  // Fills n values pairwise (cos and sin branches), consuming
  // 2*ceil(n/2) uniforms.
  void fill_normal(float* dst, int64_t n, float mean = 0.0f, float stddev = 1.0f);

  // Independent child stream; deterministic in (state, stream).
  Rng derive(uint64_t stream) const;

 private:
  Rng() = default;
  std::array<uint64_t, 4> s_{};
};

// splitmix64 step; also used for lattice hashing in the data generator.
uint64_t splitmix64(uint64_t& state);
uint64_t hash64(uint64_t x);

}  // namespace dsts
