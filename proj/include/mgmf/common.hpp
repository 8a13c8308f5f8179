#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mgmf {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or dimension violation on a tensor operation.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid or inconsistent configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Malformed input data: manifests, blobs, samples.
struct DataError : Error {
  using Error::Error;
};

// API contract violation: wrong call sequence or bad argument.
struct ContractError : Error {
  using Error::Error;
};

// Runtime training failure, e.g. non-finite loss.
struct TrainError : Error {
  using Error::Error;
};

// splitmix64. Deterministic regardless of platform; every consumer owns an
// independent stream derived from (seed, name) so adding or removing one
// consumer never shifts another's draws.
struct SplitMix64 {
  std::uint64_t state;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n); n > 0
  std::uint64_t below(std::uint64_t n) { return next() % n; }
};

std::uint64_t fnv1a(const std::string& s);

// Mixes two words into one; used to derive sub-seeds.
std::uint64_t mix_u64(std::uint64_t a, std::uint64_t b);

// Stream seeded from a root seed and a label.
inline SplitMix64 seeded_stream(std::uint64_t seed, const std::string& label) {
  return SplitMix64(mix_u64(seed, fnv1a(label)));
}

}  // namespace mgmf
