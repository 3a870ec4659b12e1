#pragma once

#include <stdexcept>
#include <string>

namespace tsadapt {

/// Violated mathematical precondition (empty series, single-class labels, ...).
class DomainError : public std::runtime_error {
public:
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed or inconsistent input data (bad CSV, channel mismatch, NaNs, ...).
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// CSV/JSON syntax problem; carries file and line context in the message.
class ParseError : public DataError {
public:
    explicit ParseError(const std::string& msg) : DataError(msg) {}
};

/// Bad run configuration: unknown method, missing checkpoint or dataset, ...
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Internal shape/state misuse between components (params vs trace, grads vs params).
class StructuralError : public std::logic_error {
public:
    explicit StructuralError(const std::string& msg) : std::logic_error(msg) {}
};

} // namespace tsadapt
