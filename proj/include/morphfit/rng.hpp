#ifndef MORPHFIT_RNG_HPP_
#define MORPHFIT_RNG_HPP_

#include <cstdint>
#include <random>

namespace morphfit {

// splitmix64 step; used to derive independent seed streams from a master seed.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Mixes a master seed with stream tags (e.g. sample index, purpose) so every
// consumer gets its own decorrelated engine regardless of draw order elsewhere.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag_a, std::uint64_t tag_b = 0) {
  std::uint64_t s = master;
  splitmix64(s);
  s ^= 0x6a09e667f3bcc909ULL + tag_a;
  splitmix64(s);
  s ^= 0xbb67ae8584caa73bULL + tag_b;
  return splitmix64(s);
}

inline std::mt19937_64 make_engine(std::uint64_t master, std::uint64_t tag_a, std::uint64_t tag_b = 0) {
  return std::mt19937_64(derive_seed(master, tag_a, tag_b));
}

}  // namespace morphfit

#endif  // MORPHFIT_RNG_HPP_
