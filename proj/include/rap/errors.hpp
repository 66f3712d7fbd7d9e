#pragma once

#include <stdexcept>
#include <string>

namespace rap {

// Shape/dimension disagreements between operands or against a config.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or truncated on-disk data. Carries the byte offset where
// parsing stopped making sense.
struct FormatError : std::runtime_error {
    FormatError(const std::string& msg, std::size_t byte_offset)
        : std::runtime_error(msg + " (at byte " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

// Bad configuration detected before any computation runs.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf produced by a numerical process that is required to stay finite.
struct DivergenceError : std::runtime_error {
    DivergenceError(const std::string& msg, long step)
        : std::runtime_error(msg + " (step " + std::to_string(step) + ")"),
          step_index(step) {}
    long step_index;
};

// Retrieval against an empty (or fully excluded) database, shape mismatch
// between query and entries, and similar.
struct RetrievalError : std::runtime_error {
    explicit RetrievalError(const std::string& msg) : std::runtime_error(msg) {}
};

// API misuse: wrong variant/argument combination, missing activations, ...
struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace rap
