#pragma once

#include <cstdint>
#include <vector>

namespace etap {

/// PCG32 (XSH-RR variant, 64-bit state, 32-bit output) with Box-Muller normals.
///
/// The generator is fully specified here so streams are identical on every
/// platform; std:: distributions are avoided for the same reason.
class Rng {
 public:
  struct State {
    std::uint64_t state = 0;
    std::uint64_t inc = 1;
    bool has_spare = false;
    double spare = 0.0;
  };

  explicit Rng(std::uint64_t seed = 0x853c49e6748fea9bULL, std::uint64_t stream = 0xda3e39cb94b95bdbULL);

  /// Independent generator for item `index` of a run seeded with `seed`.
  static Rng derive(std::uint64_t seed, std::uint64_t index);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint32_t below(std::uint32_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint32_t>(last - first);
    for (std::uint32_t i = n; i > 1; --i) {
      std::uint32_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  State state() const { return s_; }
  void set_state(const State& s) { s_ = s; }

 private:
  State s_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace etap
