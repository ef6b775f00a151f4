#pragma once

#include <stdexcept>
#include <string>

namespace goat {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

// A caller broke a precondition of an operation.
class ContractError : public Error {
public:
    using Error::Error;
};

// NaN or Inf appeared in a forward value or gradient.
class NumericError : public Error {
public:
    using Error::Error;
};

// Softmax row with every entry masked out.
class DegenerateRowError : public Error {
public:
    using Error::Error;
};

// Malformed on-disk data (manifest, blob, CSV, checkpoint).
class FormatError : public Error {
public:
    using Error::Error;
};

// Well-formed data that violates a domain invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

// Metric requested on data for which it is undefined (e.g. AUC with one class).
class MetricError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace goat
