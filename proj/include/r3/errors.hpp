#pragma once

#include <stdexcept>
#include <string>

namespace r3 {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// A precondition of an operation was violated by the caller.
class ContractError : public Error {
public:
    using Error::Error;
};

class LookupError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Persisted data failed an integrity check (manifest counts, checksum).
class CorruptionError : public Error {
public:
    using Error::Error;
};

/// The finite-difference oracle cannot be trusted (e.g. non-deterministic loss).
class OracleInvalid : public Error {
public:
    using Error::Error;
};

}  // namespace r3
