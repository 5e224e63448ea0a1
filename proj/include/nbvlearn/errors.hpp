#pragma once

#include <stdexcept>
#include <string>

namespace nbvlearn {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or configuration value.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or corrupted file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File produced by an incompatible writer version.
class VersionError : public FormatError {
 public:
  VersionError(const std::string& what, unsigned expected, unsigned found)
      : FormatError(what + ": expected version " + std::to_string(expected) +
                    ", found " + std::to_string(found)),
        expected_(expected),
        found_(found) {}
  unsigned expected() const { return expected_; }
  unsigned found() const { return found_; }

 private:
  unsigned expected_;
  unsigned found_;
};

/// Procedural generation could not satisfy its constraints.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// The simulated robot ended up somewhere physically impossible.
class SimulationError : public Error {
 public:
  using Error::Error;
};

/// A planner handed the simulator a path that violates its contract.
class PlanningError : public Error {
 public:
  using Error::Error;
};

/// Pose handed to a gain evaluation is not a free cell.
class InfeasiblePoseError : public Error {
 public:
  using Error::Error;
};

/// A sampler could not produce any feasible pose.
class SamplingExhaustedError : public Error {
 public:
  using Error::Error;
};

/// Tensor / layer dimension mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value encountered during training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Dataset content does not meet the requirements of an operation.
class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace nbvlearn
