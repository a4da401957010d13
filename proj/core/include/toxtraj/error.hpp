#pragma once

#include <stdexcept>
#include <string>

namespace toxtraj {

/// Base class for every error raised by the library. Callers that only care
/// about "something in the pipeline failed" can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input violated an operation's precondition (bad sizes, out-of-range values).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A file could not be read, written, or parsed.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace toxtraj
