#pragma once

#include <stdexcept>
#include <string>

namespace spikefuse {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor extents or inner dimensions disagree.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error("shape: " + msg) {}
};

// Bad option value, incompatible strategy, empty input where content is required.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

// Malformed text input (CSV line, config file, compact layer notation).
struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error("parse: " + msg) {}
};

// Coordinate outside the sensor extent.
struct BoundsError : Error {
    explicit BoundsError(const std::string& msg) : Error("bounds: " + msg) {}
};

// Degenerate boxes, centers outside a map, empty pooled regions.
struct GeometryError : Error {
    explicit GeometryError(const std::string& msg) : Error("geometry: " + msg) {}
};

// Value outside its domain (non-binary spikes, bad polarity, zero denominators).
struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error("domain: " + msg) {}
};

// A verification oracle cannot be trusted (non-deterministic function under test).
struct OracleError : Error {
    explicit OracleError(const std::string& msg) : Error("oracle: " + msg) {}
};

}  // namespace spikefuse
