#pragma once

#include <stdexcept>
#include <string>

namespace surfpool {

/// Base class for all errors raised by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A caller-supplied argument violates a precondition.
struct ArgumentError : Error {
  using Error::Error;
};

/// A file could not be parsed; message carries file, line and column.
struct ParseError : Error {
  using Error::Error;
};

/// A mesh whose face-induced edge graph is not connected.
struct ConnectivityError : Error {
  using Error::Error;
};

/// A graph handed to the spectral pipeline has more than one zero mode.
struct DisconnectedError : Error {
  using Error::Error;
};

/// A node with zero degree where a positive degree is required.
struct DegreeError : Error {
  using Error::Error;
};

/// An iterative solver failed to converge within its iteration budget.
struct ConvergenceError : Error {
  using Error::Error;
};

/// Non-finite values encountered in a numeric computation.
struct NumericalError : Error {
  using Error::Error;
};

/// Tensor shapes incompatible for the requested operation.
struct ShapeError : Error {
  using Error::Error;
};

/// An object used in a state it does not support (e.g. unaligned embedding).
struct StateError : Error {
  using Error::Error;
};

}  // namespace surfpool
