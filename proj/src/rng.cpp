#include "dan/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "dan/error.hpp"

namespace dan {

std::uint64_t HashKey(std::string_view key) {
  // FNV-1a followed by a splitmix64 finalizer.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : key) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  h += 0x9e3779b97f4a7c15ULL;
  h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ULL;
  h = (h ^ (h >> 27)) * 0x94d049bb133111ebULL;
  return h ^ (h >> 31);
}

std::uint64_t Rng::uniform_int(std::uint64_t n) {
  Require(n > 0, ErrorKind::kParameter, "uniform_int range must be non-empty");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return v % n;
}

double Rng::normal(double mean, double stddev) {
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return mean + stddev * radius * std::cos(angle);
}

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' ';
  out.precision(17);
  out << std::hexfloat << spare_;
  return out.str();
}

Rng Rng::FromState(const std::string& state) {
  Rng rng;
  std::istringstream in(state);
  int has_spare = 0;
  std::string spare;
  in >> rng.engine_ >> has_spare >> spare;
  Require(!in.fail(), ErrorKind::kCorruptFile, "malformed rng state");
  rng.has_spare_ = has_spare != 0;
  rng.spare_ = std::strtod(spare.c_str(), nullptr);
  return rng;
}

Rng Rng::Substream(std::uint64_t seed, std::string_view key) {
  return Rng(HashKey(key) ^ (seed * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL));
}

bool Rng::operator==(const Rng& other) const {
  return engine_ == other.engine_ && has_spare_ == other.has_spare_ &&
         (!has_spare_ || spare_ == other.spare_);
}

}  // namespace dan
