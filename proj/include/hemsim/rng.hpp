#pragma once

#include <cstdint>

namespace hemsim {

/// SplitMix64 generator (Steele, Lea, Flood 2014).
///
/// Used everywhere a seeded stream is needed so that generated data and
/// randomized scenarios are bit-identical across compilers and platforms.
/// The standard library engines are portable but its distributions are not,
/// so uniform and normal draws are derived here from the raw 64-bit stream.
class SplitMix64
{
public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next();

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Equiprobable -1 or +1.
  int sign() { return (next() >> 63) ? 1 : -1; }

private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Derive an independent stream seed from a base seed and a tag.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag);

}  // namespace hemsim
