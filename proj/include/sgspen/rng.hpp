#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sgspen {

using Rng = std::mt19937_64;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Derives an independent seed for a named sub-stream of a root seed.
/// Streams are keyed by (root, name, a, b) so that e.g. the inference noise
/// for example 17 at epoch 3 does not depend on anything else in the run.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view name,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = detail::splitmix64(root ^ detail::hash_name(name));
  h = detail::splitmix64(h ^ a);
  h = detail::splitmix64(h ^ (b + 0x51ed27ULL));
  return h;
}

inline Rng make_rng(std::uint64_t root, std::string_view name, std::uint64_t a = 0,
                    std::uint64_t b = 0) {
  return Rng(derive_seed(root, name, a, b));
}

}  // namespace sgspen
