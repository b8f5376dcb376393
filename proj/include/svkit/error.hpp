#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace svkit {

// Base type for all toolkit errors.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Filesystem-level failure: missing, unreadable, or unwritable path.
class io_error : public error {
 public:
  using error::error;
};

// Malformed on-disk data. Subclasses identify the failure mode so callers
// can tell them apart.
class format_error : public error {
 public:
  using error::error;
};

class bad_magic_error : public format_error {
 public:
  using format_error::format_error;
};

class bad_version_error : public format_error {
 public:
  using format_error::format_error;
};

class truncated_error : public format_error {
 public:
  using format_error::format_error;
};

class non_finite_error : public format_error {
 public:
  using format_error::format_error;
};

// Text parse failure; line numbers are 1-based.
class parse_error : public format_error {
 public:
  parse_error(const std::string& message, std::size_t line)
      : format_error(message + " (line " + std::to_string(line) + ")"),
        line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_ = 0;
};

// Violated precondition or domain invariant: shape mismatch, zero-norm
// input, bad configuration.
class invariant_error : public error {
 public:
  using error::error;
};

}  // namespace svkit
