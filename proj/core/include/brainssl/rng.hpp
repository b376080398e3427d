#pragma once

#include <cstdint>
#include <limits>
#include <string_view>
#include <utility>

namespace brainssl {

/// Counter-based generator: the n-th output is a pure function of
/// (key, n), so streams derived by name or index are reproducible no matter
/// in which order they are consumed. Satisfies UniformRandomBitGenerator.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  /// Independent child stream identified by a name ("view_a", "rotate", ...).
  Rng substream(std::string_view name) const;
  /// Independent child stream identified by an index (sample, epoch, worker).
  Rng substream(std::uint64_t index) const;

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [lo, hi], both inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Standard normal via Box-Muller; portable across standard libraries.
  /// Consumes two outputs per call so (key, counter) is the whole state.
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  /// Restores a generator from (key, counter), e.g. after checkpoint reload.
  static Rng from_state(std::uint64_t key, std::uint64_t counter);

  static std::uint64_t mix(std::uint64_t z);

 private:
  struct RawKey {};
  Rng(RawKey, std::uint64_t key) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Fisher-Yates shuffle driven by Rng; unlike std::shuffle the result does
/// not depend on the standard library implementation.
template <typename It>
void shuffle(It first, It last, Rng& rng) {
  const auto n = static_cast<std::int64_t>(last - first);
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = rng.uniform_int(0, i);
    using std::swap;
    swap(first[i], first[j]);
  }
}

/// Seed for epoch `epoch` of a run seeded with `master_seed`; stateless.
std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t index);

}  // namespace brainssl
