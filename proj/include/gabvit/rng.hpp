#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace gabvit {

/// Seeded generator whose output is fully specified by the standard
/// (mt19937_64 + seed_seq), so streams are reproducible across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  // Independent substreams keyed by a name or an index.
  Rng(std::uint64_t seed, std::string_view stream);
  Rng(std::uint64_t seed, std::uint64_t index);

  std::uint64_t next() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t fnv1a(std::string_view text);

}  // namespace gabvit
