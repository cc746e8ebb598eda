#pragma once

#include <stdexcept>
#include <string>

namespace tsgb {

// Root of every error the library raises. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand extents disagree with what an operation requires.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Bad argument values (class index out of range, alpha <= 0, ...).
class ArgumentError : public Error {
public:
    using Error::Error;
};

// File could not be opened, read or written.
class IoError : public Error {
public:
    using Error::Error;
};

// Malformed input data: image files, ground-truth indices, datasets.
class DataError : public Error {
public:
    using Error::Error;
};

// An internal consistency check failed.
class InvariantError : public Error {
public:
    using Error::Error;
};

}  // namespace tsgb
