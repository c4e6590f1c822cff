#pragma once

#include <stdexcept>
#include <string>

namespace cirlab {

// Shape/extent mismatch between tensors or sequences.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Math domain violation (log of non-positive, zero vector in cosine).
struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration value or unknown name.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API contract violation (non-scalar loss, degenerate batch, reused tape).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Filesystem failure; message carries the path.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed input file; message carries the line number when known.
struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite value where a finite one is required (diverged loss).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace cirlab
