#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace kvl {

// Error taxonomy mirrored by the CLI exit codes:
// config/usage -> 1, assertion/tolerance -> 2, runtime numerical -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape mismatch between operands; message carries both shapes.
struct DimError : Error {
    using Error::Error;
};

// Invalid argument value (bad axis, m > N, non-scalar loss, ...).
struct ArgError : Error {
    using Error::Error;
};

// Invalid module/run configuration detected at construction.
struct ConfigError : Error {
    using Error::Error;
};

// Non-finite values or failed numerical quality checks.
struct NumericError : Error {
    using Error::Error;
};

std::string shape_str(const std::vector<std::size_t>& shape);

}  // namespace kvl
