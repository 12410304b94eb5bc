#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace ecs {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) {
  return mix64(mix64(master) ^ tag);
}

/// FNV-1a over bytes.
constexpr std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stream tags for derive_seed, so each consumer of the master seed gets its
// own sequence.
namespace seed_tag {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t train = 2;
inline constexpr std::uint64_t split = 3;
inline constexpr std::uint64_t evolution = 4;
inline constexpr std::uint64_t fitness = 5;
inline constexpr std::uint64_t final_finetune = 6;
inline constexpr std::uint64_t control = 7;
inline constexpr std::uint64_t surrogate = 8;
}  // namespace seed_tag

}  // namespace ecs
