#pragma once

#include <stdexcept>
#include <string>

namespace epc {

// Base class for all engine errors so callers can catch the whole family.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// geometry / numerics
struct EpochMismatch : Error {
  using Error::Error;
};
struct DegenerateGeometry : Error {
  using Error::Error;
};
struct NotPositiveDefinite : Error {
  using Error::Error;
};
struct SingularCovariance : Error {
  using Error::Error;
};
struct InvalidCovariance : Error {
  using Error::Error;
};

// homomorphic backend
struct KeyMismatch : Error {
  using Error::Error;
};
struct ShapeMismatch : Error {
  using Error::Error;
};
struct LayerViolation : Error {
  using Error::Error;
};
struct LevelBudgetExceeded : Error {
  using Error::Error;
};
struct EmptyFold : Error {
  using Error::Error;
};

// network simulation
struct UnknownParty : Error {
  using Error::Error;
};
struct IllegalRoute : Error {
  using Error::Error;
};

// audit
struct InsufficientTrials : Error {
  using Error::Error;
};

// scenario ingestion
struct ScenarioError : Error {
  using Error::Error;
};

}  // namespace epc
