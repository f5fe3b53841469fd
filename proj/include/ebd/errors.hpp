#pragma once

#include <stdexcept>
#include <string>

namespace ebd {

// Error taxonomy mirrored by the CLI exit codes (see tools/ebd_cli.cpp):
// ConfigError -> 2, ParseError -> 3, SolverError -> 4, IoError -> 5.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or inconsistent input data (files, feature sets, match lists).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure inside the conic solver or the IRLS driver.
struct SolverError : std::runtime_error {
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Degenerate geometric input: rank-3 fundamental matrix, point at the
// epipole, collapsed triangle, zero similarity part of an affine map.
struct GeometryError : ConfigError {
  explicit GeometryError(const std::string& msg) : ConfigError(msg) {}
};

}  // namespace ebd
