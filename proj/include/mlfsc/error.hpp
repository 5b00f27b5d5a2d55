#pragma once

#include <stdexcept>
#include <string>

namespace mlfsc {

// Bad input data, corrupt files, or inconsistent models. The CLI maps these
// to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration or flag combinations (exit code 1).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace mlfsc
