#ifndef TDPFED_RNG_HPP_
#define TDPFED_RNG_HPP_

#include <cstdint>
#include <random>
#include <string_view>

namespace tdpfed {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/**
 * Seed for a named stream. Every random draw in the library goes through a
 * stream derived this way from the experiment seed, so that streams never
 * alias and results do not depend on evaluation order.
 */
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view stream,
                                    std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = mix64(base);
  for (char c : stream) h = mix64(h ^ static_cast<unsigned char>(c));
  h = mix64(h ^ a);
  h = mix64(h ^ (b + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, std::string_view stream, std::uint64_t a = 0,
                    std::uint64_t b = 0) {
  return Rng(derive_seed(base, stream, a, b));
}

}  // namespace tdpfed

#endif  // TDPFED_RNG_HPP_
