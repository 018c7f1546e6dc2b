#include "epc/geometry.hpp"

#include <cmath>

namespace epc {

RelativeState relative_state(const StateVector& s1, const StateVector& s2) {
  if (s1.epoch != s2.epoch) {
    throw EpochMismatch("relative_state: states are not time-synchronized");
  }
  RelativeState out;
  out.r_rel = s1.r - s2.r;
  out.v_rel = s1.v - s2.v;
  out.h = out.r_rel.cross(out.v_rel);
  out.r0 = out.r_rel.norm();
  return out;
}

Mat3 skew(const Vec3& a) {
  Mat3 m;
  m << 0.0, -a.z(), a.y(),
       a.z(), 0.0, -a.x(),
      -a.y(), a.x(), 0.0;
  return m;
}

bool skew_difference_identity_check(const Vec3& a, const Vec3& b) {
  const Mat3 lhs = skew(a) - skew(b);
  const Mat3 rhs = skew(a - b);
  return (lhs - rhs).cwiseAbs().maxCoeff() <= 1e-14;
}

EncounterFrame encounter_frame(const RelativeState& rel, double eps) {
  const double vn = rel.v_rel.norm();
  if (!(vn > eps)) {
    throw DegenerateGeometry("encounter_frame: |v_rel| below degeneracy threshold");
  }
  const double hn = rel.h.norm();
  if (!(hn > eps)) {
    throw DegenerateGeometry("encounter_frame: |h| below degeneracy threshold");
  }
  const Vec3 Y = rel.v_rel / vn;
  const Vec3 Z = rel.h / hn;
  const Vec3 X = Y.cross(Z);
  EncounterFrame f;
  f.Q.row(0) = X.transpose();
  f.Q.row(1) = Y.transpose();
  f.Q.row(2) = Z.transpose();
  f.q_xz.row(0) = f.Q.row(0);
  f.q_xz.row(1) = f.Q.row(2);
  return f;
}

Mat3 combined_covariance(const Mat3& c1, const Mat3& c2) {
  return c1 + c2;
}

Mat2 project_covariance(const EncounterFrame& f, const Mat3& c) {
  return f.q_xz * c * f.q_xz.transpose();
}

Mat3 factor_covariance(const Mat3& c) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(c);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0) {
    throw NotPositiveDefinite("factor_covariance: covariance is not positive definite");
  }
  Eigen::LLT<Mat3> llt(c);
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefinite("factor_covariance: Cholesky factorization failed");
  }
  return llt.matrixL();
}

void validate_covariance(const Mat3& c) {
  if (!c.allFinite()) {
    throw InvalidCovariance("covariance has non-finite entries");
  }
  const double scale = std::max(c.cwiseAbs().maxCoeff(), 1e-300);
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw InvalidCovariance("covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(c);
  if (es.info() != Eigen::Success) {
    throw InvalidCovariance("covariance eigendecomposition failed");
  }
  if (es.eigenvalues().minCoeff() < -1e-12 * std::abs(c.trace())) {
    throw InvalidCovariance("covariance is not positive semidefinite");
  }
}

}  // namespace epc
