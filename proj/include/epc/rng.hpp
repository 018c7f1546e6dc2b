#pragma once

#include <array>
#include <cstdint>

namespace epc {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11). Chosen because
// every draw is addressed by (seed, stream, counter): the oracle and the
// protocol can replay each other's normal deviates without sharing state.
struct Philox4x32 {
  static std::array<std::uint32_t, 4> block(const std::array<std::uint32_t, 4>& ctr,
                                            const std::array<std::uint32_t, 2>& key);
};

// splitmix64 step; used for seed derivation and opaque-token generation.
std::uint64_t mix64(std::uint64_t x);

// Deterministic child seed for independent sub-experiments (trials, sessions).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);

// One logical stream of randomness, random-access by counter.
// Block k yields two 64-bit words; key = seed, counter = (stream, k).
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream)
      : seed_(seed), stream_(stream) {}

  std::array<std::uint64_t, 2> block64(std::uint64_t counter) const;

  std::uint64_t u64_at(std::uint64_t index) const;
  // uniform in [0, 1)
  double uniform_at(std::uint64_t index) const;
  // standard normal pair from block k (Box-Muller; u1 in (0,1] so log is safe)
  std::array<double, 2> gauss_pair_at(std::uint64_t block) const;
  // standard normal 3-vector for sample j (blocks 2j and 2j+1; 4th deviate unused)
  std::array<double, 3> gauss3_at(std::uint64_t sample) const;

  // sequential helpers; cursor state lives in this object only
  std::uint64_t next_u64() { return u64_at(cursor_++); }
  double next_uniform() { return uniform_at(cursor_++); }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t cursor_ = 0;
};

// Well-known stream ids so independent components never collide.
namespace streams {
inline constexpr std::uint64_t kMcPlane = 0x01;       // 2-D oracle sampling
inline constexpr std::uint64_t kSchedule = 0x10;      // b(j) assignment
inline constexpr std::uint64_t kMasks = 0x11;         // w, alpha, beta draws
inline constexpr std::uint64_t kNonce = 0x12;         // ciphertext handle nonces
inline constexpr std::uint64_t kOperatorZ1 = 0x20;    // z_1^j draws
inline constexpr std::uint64_t kOperatorZ2 = 0x21;    // z_2^j draws
inline constexpr std::uint64_t kProbe = 0x30;         // audit statistical probe
}  // namespace streams

}  // namespace epc
