#pragma once

#include <stdexcept>
#include <string>

namespace porenet {

// Base of everything the library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Inconsistent symmetry, malformed framework, bad occupancy and similar.
struct ValidationError : Error {
  using Error::Error;
};

struct ParseError : ValidationError {
  ParseError(const std::string& where, int line, const std::string& msg)
      : ValidationError(where + ":" + std::to_string(line) + ": " + msg), line(line) {}
  int line;
};

struct ShapeError : Error {
  using Error::Error;
};

// Non-finite loss during training.
struct DivergenceError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace porenet
