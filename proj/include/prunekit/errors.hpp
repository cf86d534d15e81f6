#pragma once

#include <stdexcept>

namespace prunekit {

// Error taxonomy maps onto process exit codes:
// ConfigError -> 2, DataError -> 3, NumericError -> 4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API contract violations: missing/stale caches, shape mismatches between
// composed operations. These indicate caller bugs, not bad user input.
struct UsageError : std::logic_error {
    using std::logic_error::logic_error;
};

struct ShapeError : UsageError {
    using UsageError::UsageError;
};

} // namespace prunekit
