#pragma once

#include <stdexcept>
#include <string>

namespace lgsan {

// Error taxonomy mapped to CLI exit codes:
//   ConfigError -> 2, DataError -> 3, NumericError -> 4.
// ShapeError and ValidationError are programming/contract errors (exit 2).

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct ShapeError : ConfigError {
  explicit ShapeError(const std::string& m) : ConfigError(m) {}
};

struct ValidationError : ConfigError {
  explicit ValidationError(const std::string& m) : ConfigError(m) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};

}  // namespace lgsan
