#pragma once

#include <stdexcept>
#include <string>

namespace frame {

// File could not be opened, read, or written.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed container contents (bad magic, truncated payload, bad header).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shapes of images, banks, weights, or cotangents do not line up.
struct GeometryError : std::runtime_error {
  explicit GeometryError(const std::string& msg) : std::runtime_error(msg) {}
};

// A numeric quantity (energy, weights, discrepancy) became non-finite.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument values outside the geometry/file domain.
struct InvalidArgument : std::runtime_error {
  explicit InvalidArgument(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace frame
