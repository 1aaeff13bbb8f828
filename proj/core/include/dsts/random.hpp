#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace dsts {

/// Seeded random stream. Distributions are implemented here rather than with
/// <random> distribution objects so sequences are identical across standard
/// library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Independent stream derived from (seed, stream id).
  static Rng derive(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in the open interval (0, 1).
  double uniform_open();
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Standard Gumbel transform of a uniform draw: -log(-log(u)).
double gumbel_from_uniform(double u);

/// n i.i.d. standard Gumbel draws.
std::vector<double> sample_gumbel(std::int64_t n, Rng& rng);

}  // namespace dsts
