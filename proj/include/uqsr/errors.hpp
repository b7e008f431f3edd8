#pragma once

#include <stdexcept>
#include <string>

namespace uqsr {

/// Shape or dimension mismatch between operands (wrong raster sizes,
/// incompatible matrix dimensions, odd high-resolution extents, ...).
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// A matrix required to be symmetric positive definite failed its
/// triangular factorization.
struct DefinitenessError : std::runtime_error {
    explicit DefinitenessError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid numeric input (non-positive variance, weight not summing to one,
/// sample count too small, ...).
struct ValueError : std::invalid_argument {
    explicit ValueError(const std::string& what) : std::invalid_argument(what) {}
};

/// Configuration file problem; carries the offending line when known.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what, int line = 0)
        : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
          line_number(line) {}
    int line_number;
};

/// Filesystem or serialization failure.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace uqsr
