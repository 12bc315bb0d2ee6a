#pragma once

#include <stdexcept>
#include <string>

namespace fann {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor or layer geometry.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Malformed file, manifest or configuration.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Non-finite or degenerate values encountered during computation.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace fann
