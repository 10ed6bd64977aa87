#pragma once

#include <stdexcept>
#include <string>

namespace mtnav {

/// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Invalid configuration value (rates, kernel sizes, dims, splits).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Floor plan generation could not satisfy its constraints.
class GenerationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Episode setup asked for something the plan cannot provide.
class TaskError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mtnav
