#include "dsts/rng.hpp"

#include <cmath>

#include "dsts/common.hpp"

namespace dsts {

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

uint64_t hash64(uint64_t x) {
  uint64_t s = x;
  return splitmix64(s);
}

namespace {
inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

Rng::Rng(uint64_t seed) {
  uint64_t sm = seed;
  for (auto& w : s_) w = splitmix64(sm);
}

Rng Rng::from_state(const std::array<uint64_t, 4>& s) {
  // All-zero state is the one fixed point of xoshiro; reject it.
  if (s[0] == 0 && s[1] == 0 && s[2] == 0 && s[3] == 0)
    throw ConfigError("Rng::from_state: all-zero state");
  Rng r;
  r.s_ = s;
  return r;
}

uint64_t Rng::next_u64() {
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

double Rng::next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

float Rng::next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  if (lo >= hi) throw ConfigError("Rng::uniform_int: empty range");
  uint64_t span = static_cast<uint64_t>(hi - lo);
  // Multiply-shift; bias is O(span/2^64), irrelevant at our ranges.
  unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * span;
  return lo + static_cast<int64_t>(m >> 64);
}

float Rng::normal() {
  // u1 in (0,1] so the log is finite.
  double u1 = 1.0 - next_double();
  double u2 = next_double();
  double r = std::sqrt(-2.0 * std::log(u1));
  return static_cast<float>(r * std::cos(2.0 * M_PI * u2));
}

void Rng::fill_normal(float* dst, int64_t n, float mean, float stddev) {
  for (int64_t i = 0; i < n; i += 2) {
    double u1 = 1.0 - next_double();
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    dst[i] = mean + stddev * static_cast<float>(r * std::cos(a));
    if (i + 1 < n) dst[i + 1] = mean + stddev * static_cast<float>(r * std::sin(a));
  }
}

Rng Rng::derive(uint64_t stream) const {
  uint64_t sm = s_[0] ^ hash64(stream ^ 0xA5A5A5A55A5A5A5Aull);
  sm ^= hash64(s_[2] + stream);
  Rng child(sm);
  return child;
}

}  // namespace dsts
