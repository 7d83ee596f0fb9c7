#pragma once

#include <stdexcept>
#include <string>

namespace leakgnn {

// Base class for all library errors so callers can catch one type.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes incompatible with the requested operation.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Input values outside the mathematical domain of an operation.
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

// Out-of-range node, edge, segment, or row index.
struct IndexError : Error {
    explicit IndexError(const std::string& msg) : Error(msg) {}
};

// Structural validation failure (topology files, parameter sets, masks).
struct ValidationError : Error {
    explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Malformed serialized artifact (CSV, JSON, checkpoint).
struct FormatError : Error {
    explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Invalid or inconsistent run configuration.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Scenario synthesis cannot proceed (e.g. disconnected topology).
struct GenerationError : Error {
    explicit GenerationError(const std::string& msg) : Error(msg) {}
};

// Non-finite values encountered where finite math is required.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

}  // namespace leakgnn
