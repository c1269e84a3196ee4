#pragma once

#include <stdexcept>
#include <string>

namespace requant {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidRange : Error {
  using Error::Error;
};
struct UnsupportedBits : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct VersionMismatch : Error {
  using Error::Error;
};
struct ShapeMismatch : Error {
  using Error::Error;
};
struct ShapeInconsistency : Error {
  using Error::Error;
};
struct DegenerateScale : Error {
  using Error::Error;
};
struct AccumulatorOverflow : Error {
  using Error::Error;
};
struct NonPositiveRange : Error {
  using Error::Error;
};
struct SchemePrecondition : Error {
  using Error::Error;
};
struct EmptyCalibration : Error {
  using Error::Error;
};
struct TopologyMismatch : Error {
  using Error::Error;
};
struct MissingLabels : Error {
  using Error::Error;
};

}  // namespace requant
