#pragma once

#include <stdexcept>
#include <string>

namespace antic {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed input text (annotation rows, score files, config values).
struct ParseError : Error {
  using Error::Error;
};

/// Well-formed input that violates a domain invariant.
struct ValidationError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct NumericError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace antic
