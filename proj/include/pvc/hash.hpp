#pragma once

#include <cstddef>
#include <string>
#include <string_view>

#include "pvc/common.hpp"

namespace pvc {

// FNV-1a over raw bytes. Used for config hashes, checkpoint tags and
// per-source seed derivation; stability across platforms matters, speed
// does not.
inline u64 fnv1a64(const void* data, std::size_t n, u64 h = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline u64 fnv1a64(std::string_view s, u64 h = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), h);
}

// splitmix64 finalizer; good avalanche for combining hashes and seeds.
inline u64 mix64(u64 x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline u64 hash_combine(u64 a, u64 b) { return mix64(a ^ mix64(b)); }

// Deterministic seed for a keyed sub-stream, e.g. (global_seed, source_id).
inline u64 derive_seed(u64 seed, std::string_view key) {
  return hash_combine(seed, fnv1a64(key));
}

inline std::string to_hex(u64 v, int digits = 16) {
  static const char* kDigits = "0123456789abcdef";
  std::string s(static_cast<std::size_t>(digits), '0');
  for (int i = digits - 1; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace pvc
