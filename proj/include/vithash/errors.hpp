#pragma once

#include <stdexcept>
#include <string>

namespace vith {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration or violated call contract. CLI exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

struct ShapeError : ConfigError {
    using ConfigError::ConfigError;
};

struct ContractError : ConfigError {
    using ConfigError::ConfigError;
};

// Unreadable or malformed input data / files. CLI exit code 3.
struct DataError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required. CLI exit code 4.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace vith
