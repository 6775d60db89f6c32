#pragma once

#include <algorithm>
#include <cstdint>
#include <random>

#include "impnet/impnet.hpp"

namespace impnet::testing {

template <class T = double>
Tensor<T> uniform(const Shape& shape, std::uint64_t seed, T lo = T(-1), T hi = T(1)) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<T> dist(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

template <class T = double>
Variable<T> param(const Shape& shape, std::uint64_t seed, T scale = T(1)) {
  return Variable<T>::parameter(uniform<T>(shape, seed, -scale, scale));
}

/// Sum of elements weighted by a fixed random mask, so every output entry
/// gets a distinct upstream gradient.
template <class T>
Variable<T> weighted_sum(Tape<T>& tape, const Variable<T>& y, std::uint64_t seed = 99) {
  return ops::sum(tape, ops::mul(tape, y, Variable<T>::constant(uniform<T>(y.shape(), seed))));
}

/// Evenly spaced values in (-1, 1), shuffled. For fewer than 1000 entries no
/// two lie within a finite-difference step of each other.
inline Tensor<double> spread(const Shape& shape, std::uint64_t seed) {
  Tensor<double> t(shape);
  const auto n = static_cast<double>(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (2.0 * static_cast<double>(i) + 1.0) / n - 1.0;
  std::mt19937_64 rng(seed);
  std::shuffle(t.raw(), t.raw() + t.size(), rng);
  return t;
}

/// Makes every MFM comparison in the base network decided by a fixed margin:
/// in each output pair one half becomes a copy of the other with its bias
/// lowered by `margin`. The winning side is drawn per pair, so both routes
/// are exercised. Max-pool ties are unaffected.
template <class T>
void separate_mfm_pairs(ModelParams<T>& p, std::uint64_t seed, T margin = T(0.5)) {
  std::mt19937_64 rng(seed);
  for (auto& [name, v] : p) {
    if (!name.starts_with("base.") || !name.ends_with(".weight")) continue;
    auto& w = v.mutable_value();
    auto& b = p.at(name.substr(0, name.size() - 6) + "bias").mutable_value();
    const std::size_t half = b.size() / 2, row = w.size() / b.size();
    for (std::size_t o = 0; o < half; ++o) {
      const bool first_wins = rng() & 1;
      const std::size_t win = first_wins ? o : o + half, lose = first_wins ? o + half : o;
      std::copy(w.raw() + win * row, w.raw() + (win + 1) * row, w.raw() + lose * row);
      b[lose] = b[win] - margin;
    }
  }
}

inline constexpr double kGradTol = 1e-3;
inline constexpr double kStep = 1e-3;

}  // namespace impnet::testing
