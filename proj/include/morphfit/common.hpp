#ifndef MORPHFIT_COMMON_HPP_
#define MORPHFIT_COMMON_HPP_

#include <cstdint>
#include <stdexcept>
#include <string>

namespace morphfit {

// 68-point landmark convention used throughout (iBUG ordering).
inline constexpr int kLandmarkCount = 68;

// Indices of the two mouth corners in the 68-point convention; the synthetic
// MOUTH_CENTER selector resolves to their midpoint.
inline constexpr int kMouthCornerLeft = 48;
inline constexpr int kMouthCornerRight = 54;

// Base error type. Subclasses map to CLI exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration, dimensions, or argument domain. Exit code 2.
struct ConfigError : Error {
  using Error::Error;
};

// Corrupt or truncated files, checksum/version mismatch. Exit code 3.
struct IntegrityError : Error {
  using Error::Error;
};

// Non-finite values or failed numeric procedures. Exit code 4.
struct NumericError : Error {
  using Error::Error;
};

// Log levels, controlled by the MORPHFIT_LOG environment variable
// (quiet|info|debug, default info). Messages go to stderr.
enum class LogLevel { quiet = 0, info = 1, debug = 2 };

LogLevel log_level();
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

}  // namespace morphfit

#endif  // MORPHFIT_COMMON_HPP_
