#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace dan {

// Seeded generator with platform-independent derived distributions.
// std::mt19937_64 output is fixed by the standard; the <random>
// distributions are not, so uniform/normal/bernoulli are derived here.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t uniform_int(std::uint64_t n);

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller; caches the second variate.
  double normal(double mean = 0.0, double stddev = 1.0);

  std::string state() const;
  static Rng FromState(const std::string& state);

  // Independent stream keyed by a string (e.g. an image id).
  static Rng Substream(std::uint64_t seed, std::string_view key);

  bool operator==(const Rng& other) const;

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t HashKey(std::string_view key);

}  // namespace dan
