#pragma once

#include <stdexcept>
#include <string>

namespace attnseg {

// Shape/extent disagreements between tensors.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An operation was called outside its contract (wrong mode, wrong count, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid or inconsistent user-facing configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed file content (bad magic, unknown value, ...).
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace attnseg
