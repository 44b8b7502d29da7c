#pragma once

#include <stdexcept>
#include <string>

namespace qdport {

/// Malformed or inconsistent input data (files, panels, shapes supplied by a caller).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or argument combination.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values, failed numerical preconditions (e.g. ties in a max under grad_check).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace qdport
