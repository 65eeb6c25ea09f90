#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace revamp {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or rank mismatch between tensors.
struct DimensionError : Error { using Error::Error; };
// NaN/Inf produced by a forward op, or a numeric precondition violated.
struct NumericError : Error { using Error::Error; };
// API misuse: bad argument combinations, missing gradients, pad candidates.
struct UsageError : Error { using Error::Error; };
// Negative sampling has an empty candidate pool.
struct SamplingError : Error { using Error::Error; };
// Name or index not resolvable (pretrained vector missing with fallback off).
struct LookupError : Error { using Error::Error; };
// Malformed corpus / vector / checkpoint input.
struct ParseError : Error { using Error::Error; };
// Invalid run configuration value.
struct ConfigError : Error { using Error::Error; };
// User sequence too short for the leave-one-out split.
struct SplitError : Error { using Error::Error; };
// Filesystem-level failure (missing file, short read, bad magic).
struct IoError : Error { using Error::Error; };

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Derives an independent, named random stream from a root seed. Streams are
// keyed by a tag plus up to two indices so adding or removing one consumer
// (an ablated table, say) cannot shift any other stream's draws.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(root ^ fnv1a(tag));
  h = splitmix64(h ^ (a * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL));
  h = splitmix64(h ^ (b * 0xd1342543de82ef95ULL + 0x94d049bb133111ebULL));
  return h;
}

// splitmix64 stream with hand-rolled distributions. std:: distributions are
// implementation-defined, which would make "same seed, same bytes" fragile
// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // [0, n); n must be positive. Modulo bias is negligible against 2^64.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw UsageError("uniform_index: empty range");
    return static_cast<std::size_t>(next_u64() % n);
  }

  // Box-Muller, deterministic across platforms.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace revamp
