#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace salbench {

// Counter-style seed derivation. Every random consumer in the project owns a
// private engine seeded through these mixers, so results never depend on how
// work is scheduled across threads.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  return splitmix64(a ^ splitmix64(b));
}

inline uint64_t hash_tag(std::string_view tag) {
  // FNV-1a, stable across platforms.
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t mix_seed(uint64_t a, std::string_view tag) {
  return mix_seed(a, hash_tag(tag));
}

class RngStream {
 public:
  explicit RngStream(uint64_t seed) : eng_(splitmix64(seed)) {}

  double uniform() { return uni_(eng_); }                  // [0,1)
  double gaussian() { return gauss_(eng_); }               // N(0,1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  uint64_t next_u64() { return eng_(); }

  // Uniform integer in [0, n).
  size_t uniform_index(size_t n) {
    return static_cast<size_t>(std::uniform_int_distribution<uint64_t>(0, n - 1)(eng_));
  }

 private:
  std::mt19937_64 eng_;
  std::uniform_real_distribution<double> uni_{0.0, 1.0};
  std::normal_distribution<double> gauss_{0.0, 1.0};
};

}  // namespace salbench
