#pragma once

#include <stdexcept>
#include <string>

namespace ocpl {

// Invalid run configuration: bad JSON, unknown keys, out-of-range settings.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Degenerate or non-finite numeric state (zero-norm vectors, diverging loss).
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// File format and filesystem failures.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ocpl
