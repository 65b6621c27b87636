#pragma once

#include <stdexcept>

namespace mcan {

// Bad command line or incompatible run configuration (exit code 1).
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Unreadable or malformed input files (exit code 2).
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite loss or other numeric breakdown during training (exit code 3).
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace mcan
