#pragma once

#include <stdexcept>
#include <string>

namespace mfsr {

// File and format problems: bad magic, truncated blob, CRC mismatch,
// missing channel, malformed header. CLI maps these to exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Runtime numerical failure: non-finite loss or state, CFL violation,
// divergent training step. CLI maps these to exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace mfsr
