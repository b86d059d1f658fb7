// SPDX-License-Identifier: MIT
// Counter-based random number generation (Philox4x32-10).
//
// Every random quantity in this library is drawn from an explicitly keyed,
// explicitly positioned stream, so results are bit-reproducible regardless
// of thread count or evaluation order. A stream is identified by a 64-bit
// seed (the cipher key) plus two 32-bit stream words (usually a replicate
// index and a purpose tag); the block index advances as values are drawn.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace swedge {

// One block of the Philox 4x32 counter cipher with 10 rounds. Reference
// constants from Salmon et al.'s original description; known-answer vectors
// are pinned in the unit tests.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t M0 = 0xD2511F53u;
  constexpr std::uint32_t M1 = 0xCD9E8D57u;
  constexpr std::uint32_t W0 = 0x9E3779B9u;
  constexpr std::uint32_t W1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += W0;
      key[1] += W1;
    }
    const std::uint64_t p0 = static_cast<std::uint64_t>(M0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(M1) * ctr[2];
    const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

// A positioned view into one Philox stream. Cheap to construct; copying one
// forks an independent cursor (rarely wanted, so prefer passing by reference).
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint32_t stream_a, std::uint32_t stream_b)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)},
        stream_a_(stream_a),
        stream_b_(stream_b) {}

  std::uint32_t next_u32() {
    if (word_ == 4) {
      block_ = philox4x32({static_cast<std::uint32_t>(index_),
                           static_cast<std::uint32_t>(index_ >> 32), stream_a_, stream_b_},
                          key_);
      ++index_;
      word_ = 0;
    }
    return block_[word_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  // Uniform on [0, 1), 53-bit resolution.
  double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1]; safe to pass through log().
  double u01_open() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  bool bernoulli(double p) { return u01() < p; }

  // Standard normal via Box-Muller; consumes exactly two 64-bit draws so the
  // stream position never depends on previously generated values.
  double normal() {
    const double u1 = u01_open();
    const double u2 = u01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }
  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Uniform integer on [0, n). Rejection sampling keeps it exactly uniform.
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = (UINT64_MAX / n) * n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[uniform_int(i)]);
    }
  }

 private:
  std::array<std::uint32_t, 2> key_;
  std::uint32_t stream_a_;
  std::uint32_t stream_b_;
  std::uint64_t index_ = 0;
  std::array<std::uint32_t, 4> block_{};
  int word_ = 4;
};

}  // namespace swedge
