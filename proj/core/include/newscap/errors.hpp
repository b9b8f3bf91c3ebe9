#pragma once

#include <stdexcept>
#include <string>

namespace newscap {

/// Base class for every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor/matrix shapes do not conform; message names the offending axes.
struct DimensionError : Error {
  using Error::Error;
};

/// Input outside an operation's domain (empty corpus, bad id, ...).
struct DomainError : Error {
  using Error::Error;
};

/// An internal calling contract was broken (wrong window length, non-scalar
/// loss passed to backward, ...).
struct ContractError : Error {
  using Error::Error;
};

/// Malformed file content; message carries the byte offset or line number.
struct ParseError : Error {
  using Error::Error;
};

/// A declared invariant of a loaded or constructed value does not hold.
struct ValidationError : Error {
  using Error::Error;
};

/// A fixed capacity was exceeded (decoder position overflow, ...).
struct CapacityError : Error {
  using Error::Error;
};

/// Non-finite value detected at an op boundary.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace newscap
