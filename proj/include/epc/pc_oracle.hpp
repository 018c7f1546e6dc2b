#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "epc/geometry.hpp"

namespace epc {

// Quadrature for the conjunction-plane integral.
//
// ColumnErf (default): substitute x = r0 + R*sin(theta) so the disk chord
// length varies smoothly, then integrate each z-column of the Gaussian in
// closed form via erf. Midpoint in theta converges far below 1e-10 at the
// default resolution.
//
// MaskedMidpoint: tensor-product midpoint over the disk's bounding square
// with an inside-disk mask. Kept as an independent cross-check; its boundary
// error is O(1e-5) at resolution 2048, so it is not the default.
struct QuadratureConfig {
  enum class Scheme { ColumnErf, MaskedMidpoint };
  int resolution = 2048;
  Scheme scheme = Scheme::ColumnErf;
  // refinement: double the resolution until successive estimates differ by
  // less than refine_tol (at most max_doublings times)
  double refine_tol = 1e-8;
  int max_doublings = 2;
};

struct McConfig {
  std::uint64_t samples = 1;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;  // sub-stream id for independent repetitions
};

struct McResult {
  double pc = 0.0;
  std::uint64_t n_collisions = 0;
  std::uint64_t samples = 0;
};

struct MaeRow {
  std::uint64_t samples;
  double mae;
  int trials;
};

struct MaeReport {
  std::vector<MaeRow> rows;
  std::string to_csv() const;  // header: N,mae,trials
};

// Collision probability by deterministic quadrature of the bivariate normal
// over the disk of radius R centered at (r0, 0). Throws SingularCovariance.
double pc_integral(const ConjunctionPlaneModel& model, const QuadratureConfig& cfg = {});

// Monte Carlo estimate: n_c / N over samples s ~ N(0, sigma_xz).
// Deterministic for a fixed (seed, stream).
McResult pc_monte_carlo(const ConjunctionPlaneModel& model, const McConfig& cfg);

// Membership in the collision disk; the boundary counts as inside.
inline bool inside_collision_disk(const Vec2& s, double r0, double R) {
  const double dx = s.x() - r0;
  return dx * dx + s.y() * s.y() <= R * R;
}

// N draws from N(0, sigma_xz) as L*z with the 2x2 lower Cholesky factor.
// Throws NotPositiveDefinite.
std::vector<Vec2> sample_plane(const Mat2& sigma_xz, std::uint64_t n, std::uint64_t seed,
                               std::uint64_t stream = 0);

// Mean absolute error |pc_monte_carlo - pc_integral| per sample count,
// averaged over `trials` independent streams. Requires trials >= 30 and
// strictly increasing sample counts.
MaeReport mae_experiment(const ConjunctionPlaneModel& model,
                         std::span<const std::uint64_t> sample_counts, int trials,
                         std::uint64_t seed);

// Least-squares slope of log10(mae) against log10(N). NaN when fewer than
// two usable rows exist.
double loglog_slope(const MaeReport& report);

// Plaintext twin of the encrypted pipeline: per-operator standard normal
// 3-vectors z_i^j (streams kOperatorZ1/kOperatorZ2 of `seed`) pushed through
// s = sum_i (q_xz * sqrt_i) * z_i^j, counted against the collision disk.
// An encrypted run with the same seed must reproduce this count exactly.
McResult pc_replay(const Mat23& q_xz, const Mat3& sqrt1, const Mat3& sqrt2, double r0,
                   double R, std::uint64_t n, std::uint64_t seed);

}  // namespace epc
