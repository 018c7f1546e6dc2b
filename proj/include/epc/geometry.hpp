#pragma once

#include <Eigen/Dense>

#include "epc/errors.hpp"

namespace epc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

// Default threshold below which relative velocity / angular momentum norms
// are treated as degenerate (km/s and km^2/s respectively).
inline constexpr double kDegeneracyEps = 1e-9;

// Cartesian state of one object at a synchronized epoch. Positions in km,
// velocities in km/s, epoch in seconds (scenario-local or TAI).
struct StateVector {
  Vec3 r = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  double epoch = 0.0;
};

// Relative kinematics of an encounter: r_rel = r1 - r2, v_rel = v1 - v2,
// h = r_rel x v_rel, r0 = |r_rel|.
struct RelativeState {
  Vec3 r_rel = Vec3::Zero();
  Vec3 v_rel = Vec3::Zero();
  Vec3 h = Vec3::Zero();
  double r0 = 0.0;
};

// Orthonormal encounter frame. Rows of Q are X, Y, Z with Y along the
// relative velocity, Z along the angular momentum, X = Y x Z. q_xz keeps
// rows 1 and 3 (the conjunction plane).
struct EncounterFrame {
  Mat3 Q = Mat3::Identity();
  Mat23 q_xz = (Mat23() << 1, 0, 0, 0, 0, 1).finished();
};

// Plaintext reduction of an encounter: 2x2 projected covariance, miss
// distance r0 and combined hard-body radius R (all km / km^2).
struct ConjunctionPlaneModel {
  Mat2 sigma_xz = Mat2::Identity();
  double r0 = 0.0;
  double R = 1.0;
};

// Throws EpochMismatch unless both epochs agree.
RelativeState relative_state(const StateVector& s1, const StateVector& s2);

// Skew-symmetric embedding: skew(a) * b == a x b for all b.
Mat3 skew(const Vec3& a);

// Property helper: skew(a) - skew(b) == skew(a - b) to 1e-14.
bool skew_difference_identity_check(const Vec3& a, const Vec3& b);

// Throws DegenerateGeometry when |v_rel| or |h| falls below eps (parallel or
// zero relative motion leaves the conjunction plane undefined).
EncounterFrame encounter_frame(const RelativeState& rel, double eps = kDegeneracyEps);

Mat3 combined_covariance(const Mat3& c1, const Mat3& c2);

// sigma_xz = Q_XZ * c * Q_XZ^T
Mat2 project_covariance(const EncounterFrame& f, const Mat3& c);

// Lower Cholesky factor L with L * L^T = c. Throws NotPositiveDefinite.
Mat3 factor_covariance(const Mat3& c);

// Enforces the covariance invariants (finite, symmetric to 1e-12 relative,
// eigenvalues >= -1e-12 * trace). Throws InvalidCovariance.
void validate_covariance(const Mat3& c);

}  // namespace epc
