#pragma once

#include <string>

#include "epc/geometry.hpp"
#include "epc/protocol.hpp"

namespace epc {

struct OperatorRecord {
  Vec3 r = Vec3::Zero();
  Vec3 v = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
  double radius = 1.0;
  double epoch = 0.0;
};

// Two operator records plus run defaults, all in km / km/s after loading.
struct Scenario {
  OperatorRecord op1, op2;
  std::uint64_t default_samples = 10000;
  std::uint64_t default_seed = 1;
};

// Parses and validates a scenario document. The file declares its units
// ("km" or "m"); the loader converts to km. Near-symmetric covariances
// (within 1e-9 relative) are symmetrized by averaging. Validation failures
// throw ScenarioError.
Scenario load_scenario(const std::string& path);
Scenario parse_scenario(const std::string& json_text);
std::string scenario_to_json(const Scenario& s);

OperatorSecret to_secret(const OperatorRecord& rec);

// Plaintext reduction via the geometry pipeline. Throws DegenerateGeometry.
ConjunctionPlaneModel plane_model(const Scenario& s);

// Non-degenerate random scenario for tests: positions a few km apart,
// crossing velocities, SPD covariances, kilometer-scale radii.
Scenario random_scenario(std::uint64_t seed);

}  // namespace epc
