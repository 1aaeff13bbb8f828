#include "dsts/random.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "dsts/error.hpp"

namespace dsts {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined key
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Rng Rng::derive(std::uint64_t seed, std::uint64_t stream) { return Rng(mix_seed(seed, stream)); }

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

double Rng::normal() {
  const double u1 = uniform_open();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw InputError("Rng::below(0)");
  // rejection sampling keeps the draw unbiased
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double gumbel_from_uniform(double u) { return -std::log(-std::log(u)); }

std::vector<double> sample_gumbel(std::int64_t n, Rng& rng) {
  if (n < 1) throw InputError("sample_gumbel needs n >= 1");
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = gumbel_from_uniform(rng.uniform_open());
  return out;
}

}  // namespace dsts
