#pragma once

#include <cstdint>
#include <random>

namespace lfd {

/// Seeded generator with a platform-independent draw sequence.
///
/// The engine is std::mt19937_64, whose output is fixed by the C++ standard.
/// The standard distributions are not portable, so the conversions to real
/// numbers are done here: uniform() takes the top 53 bits of one draw,
/// normal() uses the Box-Muller transform on two uniforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Uniform integer in [0, n), rejection-sampled so it is unbiased.
  std::uint64_t below(std::uint64_t n);

  /// A child seed derived from this stream.
  std::uint64_t fork() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Mixes a base seed with a stream index into an independent seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace lfd
