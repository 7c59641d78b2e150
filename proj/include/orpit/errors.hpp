#pragma once

#include <stdexcept>
#include <string>

namespace orpit {

// Error taxonomy used across the library. The CLI maps these onto exit codes.

struct InvalidArgument : std::invalid_argument {
  explicit InvalidArgument(const std::string& msg) : std::invalid_argument(msg) {}
};

// Malformed or unreadable file contents (WAV, checkpoint, manifest).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// A metric reference that carries no usable signal (constant or all-zero).
struct DegenerateReference : std::runtime_error {
  explicit DegenerateReference(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values produced during optimization or separation.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace orpit
