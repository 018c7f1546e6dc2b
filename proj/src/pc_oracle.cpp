#include "epc/pc_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "epc/rng.hpp"

namespace epc {

namespace {

struct Inv2 {
  double i00, i01, i11, det;
};

Inv2 invert_spd2(const Mat2& s) {
  const double a = s(0, 0), b = 0.5 * (s(0, 1) + s(1, 0)), c = s(1, 1);
  const double det = a * c - b * b;
  if (!(det > 0.0) || !(a > 0.0)) {
    throw SingularCovariance("conjunction-plane covariance is singular or indefinite");
  }
  return {c / det, -b / det, a / det, det};
}

double integrate_column_erf(const ConjunctionPlaneModel& m, int n) {
  const Inv2 inv = invert_spd2(m.sigma_xz);
  // z-column of the density integrates in closed form:
  //   exp(-(i00 - i01^2/i11) x^2 / 2) * s*sqrt(pi/2) * [erf((b-mu)/(s*sqrt2)) - erf((a-mu)/(s*sqrt2))]
  // with mu = -i01 x / i11, s^2 = 1/i11.
  const double coef = inv.i00 - inv.i01 * inv.i01 / inv.i11;
  const double s = std::sqrt(1.0 / inv.i11);
  const double inv_s_sqrt2 = 1.0 / (s * std::numbers::sqrt2);
  const double dth = std::numbers::pi / n;
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    const double th = -0.5 * std::numbers::pi + (k + 0.5) * dth;
    const double sin_th = std::sin(th);
    const double cos_th = std::cos(th);
    const double x = m.r0 + m.R * sin_th;
    const double half = m.R * cos_th;
    const double mu = -inv.i01 * x / inv.i11;
    const double zint = s * std::sqrt(0.5 * std::numbers::pi) *
                        (std::erf((half - mu) * inv_s_sqrt2) - std::erf((-half - mu) * inv_s_sqrt2));
    acc += std::exp(-0.5 * coef * x * x) * zint * m.R * cos_th * dth;
  }
  return acc / (2.0 * std::numbers::pi * std::sqrt(inv.det));
}

double integrate_masked_midpoint(const ConjunctionPlaneModel& m, int n) {
  const Inv2 inv = invert_spd2(m.sigma_xz);
  const double h = 2.0 * m.R / n;
  const double r2 = m.R * m.R;
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = m.r0 - m.R + (i + 0.5) * h;
    const double dx = x - m.r0;
    for (int k = 0; k < n; ++k) {
      const double z = -m.R + (k + 0.5) * h;
      if (dx * dx + z * z > r2) continue;
      acc += std::exp(-0.5 * (inv.i00 * x * x + 2.0 * inv.i01 * x * z + inv.i11 * z * z));
    }
  }
  return acc * h * h / (2.0 * std::numbers::pi * std::sqrt(inv.det));
}

double integrate_once(const ConjunctionPlaneModel& m, const QuadratureConfig& cfg, int n) {
  return cfg.scheme == QuadratureConfig::Scheme::ColumnErf ? integrate_column_erf(m, n)
                                                           : integrate_masked_midpoint(m, n);
}

}  // namespace

double pc_integral(const ConjunctionPlaneModel& model, const QuadratureConfig& cfg) {
  int n = std::max(cfg.resolution, 16);
  double est = integrate_once(model, cfg, n);
  for (int d = 0; d < cfg.max_doublings; ++d) {
    n *= 2;
    const double next = integrate_once(model, cfg, n);
    const bool converged = std::abs(next - est) < cfg.refine_tol;
    est = next;
    if (converged) break;
  }
  return std::clamp(est, 0.0, 1.0);
}

McResult pc_monte_carlo(const ConjunctionPlaneModel& model, const McConfig& cfg) {
  const double a = model.sigma_xz(0, 0);
  const double b = 0.5 * (model.sigma_xz(0, 1) + model.sigma_xz(1, 0));
  const double c = model.sigma_xz(1, 1);
  if (!(a > 0.0) || !(a * c - b * b > 0.0)) {
    throw SingularCovariance("pc_monte_carlo: covariance is singular or indefinite");
  }
  const double l00 = std::sqrt(a);
  const double l10 = b / l00;
  const double l11 = std::sqrt(c - l10 * l10);
  const RandomStream rng(cfg.seed, streams::kMcPlane + cfg.stream);
  const double r2 = model.R * model.R;
  std::uint64_t hits = 0;
  for (std::uint64_t j = 0; j < cfg.samples; ++j) {
    const auto z = rng.gauss_pair_at(j);
    const double sx = l00 * z[0];
    const double sz = l10 * z[0] + l11 * z[1];
    const double dx = sx - model.r0;
    if (dx * dx + sz * sz <= r2) ++hits;
  }
  return {static_cast<double>(hits) / static_cast<double>(cfg.samples), hits, cfg.samples};
}

std::vector<Vec2> sample_plane(const Mat2& sigma_xz, std::uint64_t n, std::uint64_t seed,
                               std::uint64_t stream) {
  const double a = sigma_xz(0, 0);
  const double b = 0.5 * (sigma_xz(0, 1) + sigma_xz(1, 0));
  const double c = sigma_xz(1, 1);
  if (!(a > 0.0) || !(a * c - b * b > 0.0)) {
    throw NotPositiveDefinite("sample_plane: covariance is not positive definite");
  }
  const double l00 = std::sqrt(a);
  const double l10 = b / l00;
  const double l11 = std::sqrt(c - l10 * l10);
  const RandomStream rng(seed, streams::kMcPlane + stream);
  std::vector<Vec2> out;
  out.reserve(n);
  for (std::uint64_t j = 0; j < n; ++j) {
    const auto z = rng.gauss_pair_at(j);
    out.emplace_back(l00 * z[0], l10 * z[0] + l11 * z[1]);
  }
  return out;
}

std::string MaeReport::to_csv() const {
  std::ostringstream os;
  os << "N,mae,trials\n";
  for (const auto& r : rows) {
    os << r.samples << ',';
    os.precision(17);
    os << r.mae << ',' << r.trials << '\n';
  }
  return os.str();
}

MaeReport mae_experiment(const ConjunctionPlaneModel& model,
                         std::span<const std::uint64_t> sample_counts, int trials,
                         std::uint64_t seed) {
  if (trials < 30) {
    throw InsufficientTrials("mae_experiment: at least 30 trials required");
  }
  for (std::size_t i = 1; i < sample_counts.size(); ++i) {
    if (sample_counts[i] <= sample_counts[i - 1]) {
      throw Error("mae_experiment: sample counts must be strictly increasing");
    }
  }
  const double reference = pc_integral(model);
  MaeReport report;
  for (std::size_t ni = 0; ni < sample_counts.size(); ++ni) {
    double acc = 0.0;
    for (int t = 0; t < trials; ++t) {
      McConfig cfg;
      cfg.samples = sample_counts[ni];
      cfg.seed = seed;
      cfg.stream = (static_cast<std::uint64_t>(ni + 1) << 24) + static_cast<std::uint64_t>(t);
      acc += std::abs(pc_monte_carlo(model, cfg).pc - reference);
    }
    report.rows.push_back({sample_counts[ni], acc / trials, trials});
  }
  return report;
}

double loglog_slope(const MaeReport& report) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : report.rows) {
    if (r.mae > 0.0) pts.emplace_back(std::log10(static_cast<double>(r.samples)), std::log10(r.mae));
  }
  if (pts.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [x, y] : pts) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(pts.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

McResult pc_replay(const Mat23& q_xz, const Mat3& sqrt1, const Mat3& sqrt2, double r0,
                   double R, std::uint64_t n, std::uint64_t seed) {
  const Mat23 m1 = q_xz * sqrt1;
  const Mat23 m2 = q_xz * sqrt2;
  const RandomStream z1(seed, streams::kOperatorZ1);
  const RandomStream z2(seed, streams::kOperatorZ2);
  const double r2 = R * R;
  std::uint64_t hits = 0;
  for (std::uint64_t j = 0; j < n; ++j) {
    const auto a = z1.gauss3_at(j);
    const auto b = z2.gauss3_at(j);
    const Vec2 s = m1 * Vec3(a[0], a[1], a[2]) + m2 * Vec3(b[0], b[1], b[2]);
    const double dx = s.x() - r0;
    if (dx * dx + s.y() * s.y() <= r2) ++hits;
  }
  return {static_cast<double>(hits) / static_cast<double>(n), hits, n};
}

}  // namespace epc
