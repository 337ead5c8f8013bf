#include "hemsim/rng.hpp"

#include <cmath>
#include <numbers>

namespace hemsim {

std::uint64_t SplitMix64::next()
{
  std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double SplitMix64::uniform()
{
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double SplitMix64::normal()
{
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) { u1 = uniform(); }
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double t = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(t);
  has_spare_ = true;
  return r * std::cos(t);
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag)
{
  SplitMix64 g(base ^ (tag * 0xd1342543de82ef95ULL));
  g.next();
  return g.next();
}

}  // namespace hemsim
