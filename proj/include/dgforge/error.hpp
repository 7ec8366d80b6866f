#pragma once

#include <stdexcept>
#include <string>

namespace dgforge {

/// Base class of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not conform for the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid hyperparameter or configuration value.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A caller broke an operation's precondition (empty batch, too few domains, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Malformed input data (labels, value ranges, sample shapes).
class InputError : public Error {
public:
    using Error::Error;
};

/// Failure reading feature files, manifests, checkpoints or reports.
class LoadError : public Error {
public:
    using Error::Error;
};

/// Non-finite values or other failures while optimizing.
class TrainingError : public Error {
public:
    using Error::Error;
};

/// The finite-difference oracle could not evaluate its function.
class OracleError : public Error {
public:
    using Error::Error;
};

} // namespace dgforge
