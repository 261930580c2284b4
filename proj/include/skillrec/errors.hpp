#pragma once

#include <stdexcept>
#include <string>

namespace skillrec {

// Exception hierarchy. The CLI maps each family onto an exit code.

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// No skill stored for a user; the caller should run initialization.
class NotInitialized : public DataError {
public:
    using DataError::DataError;
};

class BackendError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Oracle backend has no recorded response for a request.
class ScriptMiss : public BackendError {
public:
    using BackendError::BackendError;
};

// Model output could not be turned into the expected document.
class ParseError : public BackendError {
public:
    using BackendError::BackendError;
};

// A structurally valid document that breaks a pipeline rule
// (e.g. the same attribute in two diff lists).
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PartialFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace skillrec
