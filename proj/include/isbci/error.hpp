#pragma once

#include <stdexcept>
#include <string>

namespace isbci {

/// Base class for every failure raised by the library. Messages are stable
/// and tests match on them.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid user-supplied configuration (bad flags, impossible sizes, empty grids).
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Malformed or unreadable on-disk data.
class FormatError : public Error {
public:
  using Error::Error;
};

/// Numerical failure: non-SPD input, divergence, non-finite loss.
class NumericError : public Error {
public:
  using Error::Error;
};

}  // namespace isbci
