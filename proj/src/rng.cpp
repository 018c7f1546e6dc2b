#include "epc/rng.hpp"

#include <cmath>
#include <numbers>

namespace epc {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline std::array<std::uint32_t, 4> round_once(const std::array<std::uint32_t, 4>& c,
                                               const std::array<std::uint32_t, 2>& k) {
  std::uint32_t hi0, lo0, hi1, lo1;
  mulhilo(kPhiloxM0, c[0], hi0, lo0);
  mulhilo(kPhiloxM1, c[2], hi1, lo1);
  return {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
}

}  // namespace

std::array<std::uint32_t, 4> Philox4x32::block(const std::array<std::uint32_t, 4>& ctr,
                                               const std::array<std::uint32_t, 2>& key) {
  std::array<std::uint32_t, 4> c = ctr;
  std::array<std::uint32_t, 2> k = key;
  for (int r = 0; r < 10; ++r) {
    c = round_once(c, k);
    k[0] += kPhiloxW0;
    k[1] += kPhiloxW1;
  }
  return c;
}

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  return mix64(seed ^ mix64(salt));
}

std::array<std::uint64_t, 2> RandomStream::block64(std::uint64_t counter) const {
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(counter),
      static_cast<std::uint32_t>(counter >> 32),
      static_cast<std::uint32_t>(stream_),
      static_cast<std::uint32_t>(stream_ >> 32),
  };
  const std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(seed_),
      static_cast<std::uint32_t>(seed_ >> 32),
  };
  const auto out = Philox4x32::block(ctr, key);
  return {
      (static_cast<std::uint64_t>(out[1]) << 32) | out[0],
      (static_cast<std::uint64_t>(out[3]) << 32) | out[2],
  };
}

std::uint64_t RandomStream::u64_at(std::uint64_t index) const {
  return block64(index >> 1)[index & 1];
}

double RandomStream::uniform_at(std::uint64_t index) const {
  return static_cast<double>(u64_at(index) >> 11) * 0x1.0p-53;
}

std::array<double, 2> RandomStream::gauss_pair_at(std::uint64_t block) const {
  const auto w = block64(block);
  // u1 in (0,1], u2 in [0,1)
  const double u1 = static_cast<double>((w[0] >> 11) + 1) * 0x1.0p-53;
  const double u2 = static_cast<double>(w[1] >> 11) * 0x1.0p-53;
  const double rad = std::sqrt(-2.0 * std::log(u1));
  const double ang = 2.0 * std::numbers::pi * u2;
  return {rad * std::cos(ang), rad * std::sin(ang)};
}

std::array<double, 3> RandomStream::gauss3_at(std::uint64_t sample) const {
  const auto a = gauss_pair_at(2 * sample);
  const auto b = gauss_pair_at(2 * sample + 1);
  return {a[0], a[1], b[0]};
}

}  // namespace epc
