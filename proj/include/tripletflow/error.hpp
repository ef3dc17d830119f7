#pragma once

#include <stdexcept>

namespace tripletflow {

// unusable inputs: missing files, malformed CSVs, splits the data cannot support
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// malformed config files or unrecognised keys/values
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// training or inference produced non-finite numbers (or could not proceed)
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace tripletflow
