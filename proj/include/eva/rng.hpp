// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace eva {

// Deterministic random source. mt19937_64 output is fully specified by the
// standard; the double/int conversions below are spelled out by hand because
// std::uniform_real_distribution and friends are implementation-defined and
// would break bit-level reproducibility across toolchains.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller; two draws per sample, no cached pair
  double gaussian();

  // unbiased integer in [0, n)
  std::uint64_t bounded(std::uint64_t n);

  std::vector<std::size_t> permutation(std::size_t n);

private:
  std::mt19937_64 gen_;
};

// Stream derivation: one master seed fans out into independent substreams
// (data generation, weight init, SVD sampling, ...) without overlap.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace eva
