#pragma once

#include <stdexcept>
#include <string>

namespace bsf {

// Invalid configuration or parameters supplied by the caller.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed file contents; the message carries the location.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or sequence dimensions that do not fit together.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values produced by a simulation or a training run.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bsf
