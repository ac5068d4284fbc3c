#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include "fivelab/linalg.hpp"

namespace fivelab {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for a sub-stream identified by a path of integers, e.g. (seed, epoch, step).
inline std::uint64_t stream_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = mix_seed(seed);
  for (auto p : path) s = mix_seed(s ^ mix_seed(p + 0x632be59bd9b4e019ULL));
  return s;
}

inline Rng make_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
  return Rng(stream_seed(seed, path));
}

inline Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix m(rows, cols);
  // Fill column by column so a single-column draw matches the first column of a batch draw.
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n01(rng);
  return m;
}

inline Vector standard_normal(Eigen::Index size, Rng& rng) { return standard_normal(size, 1, rng); }

inline Matrix rademacher(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = (rng() >> 63) ? 1.0 : -1.0;
  return m;
}

}  // namespace fivelab
