#pragma once

#include <cstdint>
#include <string_view>

namespace xbm {

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Stable 64-bit hash of a string (FNV-1a followed by mix64), used to derive
/// named substreams.
std::uint64_t hash_name(std::string_view name);

/// Counter-based generator: the i-th draw of stream (seed, stream) is
/// mix64(key + (i + 1) * golden_gamma) with key = mix64(seed ^ mix64(stream)).
/// Every draw is a pure function of (seed, stream, counter), so results are
/// identical on every platform and substreams never need to be advanced in
/// lockstep.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform in (0, 1).
  double uniform_open();
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);
  double normal();
  /// Standard Gumbel(0, 1) draw.
  double gumbel();

  /// Independent generator keyed by this generator's key and `id`.
  CounterRng substream(std::uint64_t id) const;
  CounterRng substream(std::string_view name) const { return substream(hash_name(name)); }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  CounterRng(std::uint64_t key, std::uint64_t counter, int) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace xbm
