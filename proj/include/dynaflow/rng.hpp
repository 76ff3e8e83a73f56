#pragma once

#include <cmath>
#include <cstdint>

#include "dynaflow/common.hpp"
#include "dynaflow/tensor.hpp"

namespace dynaflow {

// splitmix64; used to derive independent child streams so that per-episode /
// per-item randomness does not depend on evaluation order.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic generator with fully specified uniform/normal algorithms
// (xoshiro256** core, Box-Muller normals). Avoids the implementation-defined
// behavior of std::*_distribution so outputs are stable across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) {
    for (int i = 0; i < 4; ++i) s_[i] = mix_seed(seed, static_cast<std::uint64_t>(i));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t uniform_index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  // Standard normal via Box-Muller (no cached spare; two uniforms per draw).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  Tensor normal_tensor(std::vector<std::size_t> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = normal();
    return t;
  }

  std::uint64_t fork(std::uint64_t index) {
    return mix_seed(next_u64(), index);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4];
};

}  // namespace dynaflow
