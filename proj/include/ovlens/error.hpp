#pragma once

#include <stdexcept>
#include <string>

namespace ovlens {

// Every error raised by the library derives from Error so callers can catch
// one type; the subclasses let the CLI map failures onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct ConvergenceError : Error { using Error::Error; };
struct ArgumentError : Error { using Error::Error; };
struct IndexError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ValidationError : Error { using Error::Error; };
struct NotFoundError : Error { using Error::Error; };
struct DegenerateError : Error { using Error::Error; };

// Raised when an embedding store lacks a (prefix, word, layer) entry.
struct CoverageError : Error { using Error::Error; };

}  // namespace ovlens
