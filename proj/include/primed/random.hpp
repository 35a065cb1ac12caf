#pragma once

#include <cstdint>
#include <random>

#include "primed/tensor.hpp"

namespace primed {

using Rng = std::mt19937_64;

inline Tensor standard_normal(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

inline Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

/// Independent stream for a (seed, purpose) pair, so components seeded from
/// the same user seed do not share draws.
inline Rng derived_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

}  // namespace primed
