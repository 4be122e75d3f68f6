#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace adaptkit {

/// SplitMix64 finalizer; the mixing function behind Rng.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Counter-based generator: the i-th output is mix64(key + i * golden).
///
/// The stream depends only on integer arithmetic, so a seed produces the
/// same sequence on every platform. `split(tag)` derives an independent
/// child stream without advancing the parent, which lets callers hand out
/// per-sample or per-model streams whose values do not depend on the order
/// in which they are consumed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : key_(mix64(seed ^ 0x6A09E667F3BCC909ULL)) {}

  std::uint64_t next_u64() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9E3779B97F4A7C15ULL);
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

  /// Standard normal via Box-Muller; consumes two draws per value.
  double normal() noexcept;

  Rng split(std::uint64_t tag) const noexcept {
    Rng child;
    child.key_ = mix64(key_ ^ mix64(tag + 0x3C6EF372FE94F82BULL));
    return child;
  }

  template <typename T>
  void shuffle(std::vector<T>& items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace adaptkit
