#include "brainssl/rng.hpp"

#include <cmath>
#include <numbers>

namespace brainssl {

std::uint64_t Rng::mix(std::uint64_t z) {
  // SplitMix64 finalizer.
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng Rng::substream(std::string_view name) const {
  // FNV-1a over the name, then folded into the parent key.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return Rng(RawKey{}, mix(key_ ^ mix(h + 0x51ed2701ULL)));
}

Rng Rng::substream(std::uint64_t index) const {
  return Rng(RawKey{}, mix(key_ ^ mix(index * 0xd1b54a32d192ed03ULL + 0x2545f4914f6cdd1dULL)));
}

Rng Rng::from_state(std::uint64_t key, std::uint64_t counter) {
  Rng r(RawKey{}, key);
  r.counter_ = counter;
  return r;
}

double Rng::uniform() {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>((*this)());
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = max() - max() % span;
  std::uint64_t x;
  do {
    x = (*this)();
  } while (x >= limit);
  return lo + static_cast<std::int64_t>(x % span);
}

double Rng::normal() {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t master_seed, std::uint64_t index) {
  return Rng::mix(Rng::mix(master_seed + 0x632be59bd9b4e019ULL) ^ (index + 1) * 0x9e3779b97f4a7c15ULL);
}

}  // namespace brainssl
