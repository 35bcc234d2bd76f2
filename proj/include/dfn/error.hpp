#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dfn {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A count/size argument is out of range (k > |cloud|, empty cloud, ...).
class SizeError : public Error {
 public:
  using Error::Error;
};

// A constructor/config parameter violates its invariant.
class ParamError : public Error {
 public:
  using Error::Error;
};

// Tensor/layer shapes do not match.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An operation was called in the wrong order (e.g. backward without forward).
class StateError : public Error {
 public:
  using Error::Error;
};

// No surface vertex within the grasp radius.
class GraspMissError : public Error {
 public:
  using Error::Error;
};

// Grasp would overlap the clamped vertex set.
class GraspConflictError : public Error {
 public:
  using Error::Error;
};

// Equilibrium solve did not reach the force tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& msg, double residual)
      : Error(msg), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

// Malformed binary file; carries the byte offset of the failure.
class FormatError : public Error {
 public:
  FormatError(const std::string& msg, std::uint64_t offset)
      : Error(msg + " (byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// Point cloud carries no usable geometry (all points coincident).
class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

// Batch norm in training mode needs at least two rows.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

// Keypoint correspondence requires simulator source ids.
class CorrespondenceError : public Error {
 public:
  using Error::Error;
};

// All top-M keypoint displacements are zero; no direction information.
class NoDeformationError : public Error {
 public:
  using Error::Error;
};

// A trained model was required but not supplied.
class ModelMissingError : public Error {
 public:
  using Error::Error;
};

// A predicted manipulation point cannot be grasped.
class MpInvalidError : public Error {
 public:
  MpInvalidError(const std::string& msg, double x, double y, double z)
      : Error(msg + " at (" + std::to_string(x) + ", " + std::to_string(y) +
              ", " + std::to_string(z) + ")"),
        x_(x), y_(y), z_(z) {}
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }

 private:
  double x_, y_, z_;
};

// Training loss became NaN; carries the offending epoch.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& msg, std::size_t epoch)
      : Error(msg + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

// Too many samples were skipped during dataset generation.
class GenerationError : public Error {
 public:
  using Error::Error;
};

}  // namespace dfn
