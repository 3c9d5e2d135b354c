#pragma once

#include <stdexcept>
#include <string>

namespace astra {

/// Base for every error raised by the engine. Callers that only need to
/// report a failure can catch this; the subclasses exist so tests and the
/// CLI can tell the failure classes apart.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input text or bytes could not be decoded.
class ParseError : public Error {
public:
    using Error::Error;
};

/// Decoded input violates a domain invariant (wrong length, out of range, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A metric was asked for on input where it has no defined value.
class UndefinedMetricError : public Error {
public:
    using Error::Error;
};

class CalibrationError : public Error {
public:
    using Error::Error;
};

/// Binary index file defects and search/build contract violations.
class IndexError : public Error {
public:
    using Error::Error;
};

/// An external client (embedding, normalization, metric plugin) failed.
class ClientError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace astra
