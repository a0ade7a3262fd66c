#pragma once
// Error taxonomy shared across the library. The CLI maps ConfigError and
// IoError to exit code 2 and NumericError to exit code 3.

#include <stdexcept>
#include <string>

namespace mstress {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user input: malformed config, unknown keys, out-of-range values.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Filesystem and parse failures on artifacts we read or write.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// Non-finite values, undefined quantities, failed sampling or solves.
struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace mstress
