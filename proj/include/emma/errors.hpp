#pragma once

#include <stdexcept>
#include <string>

namespace emma {

// Shape or rank violation (mismatched extents, empty tensors).
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

// Invalid configuration value or combination.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

// A caller broke an API contract (non-scalar loss, missing grad, mismatched checkpoints).
struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract error: " + msg) {}
};

// Malformed or corrupted file content; message carries the byte offset when known.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error("format error: " + msg) {}
};

// Caller-supplied data outside the accepted domain (overlong sequence, out-of-grid object).
struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error("input error: " + msg) {}
};

// Index outside a valid range (class labels, token ids).
struct IndexError : std::runtime_error {
    explicit IndexError(const std::string& msg) : std::runtime_error("index error: " + msg) {}
};

// Statistical estimation cannot proceed (too few samples, degenerate input).
struct EstimationError : std::runtime_error {
    explicit EstimationError(const std::string& msg) : std::runtime_error("estimation error: " + msg) {}
};

// Filesystem failure (unwritable path, failed read).
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io error: " + msg) {}
};

}  // namespace emma
