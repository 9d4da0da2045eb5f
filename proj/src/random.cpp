#include "sed/random.hpp"

namespace sed {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t key = mix64(seed);
  key = mix64(key ^ mix64(a + 0x632be59bd9b4e019ULL));
  key = mix64(key ^ mix64(b + 0x8cb92ba72f3d8dd7ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(key),
                    static_cast<std::uint32_t>(key >> 32)};
  return Rng(seq);
}

}  // namespace sed
