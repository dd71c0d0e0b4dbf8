#pragma once

#include <stdexcept>
#include <string>

namespace hmhi {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or invalid geometry.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN input or an invalid numeric argument.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Misuse of the differentiation tape.
class GraphError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace hmhi
