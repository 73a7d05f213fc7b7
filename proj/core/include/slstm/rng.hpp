// SPDX-License-Identifier: Apache-2.0
//
// Seeded random streams. Everything random in a run (initialization, subset
// selection, per-epoch shuffles) is drawn from a stream derived from the run
// seed, so identical configs replay identically.

#ifndef SLSTM_RNG_HPP
#define SLSTM_RNG_HPP

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace slstm {

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t x);

/// Derive a child seed from a parent seed and a stream tag.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix_seed(seed)) {}

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n) without modulo bias.
  std::uint64_t below(std::uint64_t n);

 private:
  // mt19937_64's output sequence is fixed by the standard; the conversions
  // above are done by hand for the same reason.
  std::mt19937_64 engine_;
};

/// Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> permutation(std::size_t n, Rng& rng);

}  // namespace slstm

#endif  // SLSTM_RNG_HPP
