#pragma once

#include <stdexcept>
#include <string>

namespace nodule {

/// Base for every error raised by the library. CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed file contents: bad header, ragged CSV, corrupt model.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Data file shorter (or longer) than its header declares.
class TruncationError : public FormatError {
public:
    using FormatError::FormatError;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class EmptyInputError : public ArgumentError {
public:
    using ArgumentError::ArgumentError;
};

/// Mesh is not a closed genus-zero manifold, or a boundary loop is not simple.
class TopologyError : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// Least-squares system has fewer samples than required.
class UnderdeterminedError : public Error {
public:
    using Error::Error;
};

class UndefinedStatisticError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace nodule
