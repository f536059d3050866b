#pragma once

#include <stdexcept>
#include <string>

namespace airpcm {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation needs.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf reached an operation boundary.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Misuse of the autodiff graph (non-scalar loss, double backward, ...).
class GraphError : public Error {
 public:
  using Error::Error;
};

// Malformed input files or data that violate a documented precondition.
class DataError : public Error {
 public:
  using Error::Error;
};

// Training loss became non-finite.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// Invalid model, training or synthetic configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace airpcm
