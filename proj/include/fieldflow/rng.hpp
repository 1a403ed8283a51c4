#pragma once

#include <cstdint>
#include <random>

namespace fieldflow {

// SplitMix64 mixing step. Used to derive independent stream seeds from one
// root seed so that per-sample / per-run streams are reproducible and do not
// depend on thread scheduling.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return splitmix64(splitmix64(root + 0x51a2b3c4d5e6f708ULL) ^
                    (stream + 1) * 0x632be59bd9b4e019ULL);
}

inline std::mt19937_64 make_engine(std::uint64_t root, std::uint64_t stream = 0) {
  return std::mt19937_64(derive_seed(root, stream));
}

}  // namespace fieldflow
