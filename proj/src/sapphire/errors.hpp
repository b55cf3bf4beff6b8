#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sapphire {

// Base class for every error raised by the library. The C API maps each
// subclass onto a distinct status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(const std::string& where, std::size_t expected,
                    std::size_t got)
      : Error(where + ": dimension mismatch (expected " +
              std::to_string(expected) + ", got " + std::to_string(got) +
              ")") {}
};

class NotPositiveDefinite : public Error {
 public:
  explicit NotPositiveDefinite(std::size_t pivot)
      : Error("matrix is not positive definite (pivot " +
              std::to_string(pivot) + ")"),
        pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t offset)
      : Error("line " + std::to_string(line) + ", byte " +
              std::to_string(offset) + ": " + what),
        line_(line),
        offset_(offset) {}
  std::size_t line() const noexcept { return line_; }
  std::size_t byte_offset() const noexcept { return offset_; }

 private:
  std::size_t line_;
  std::size_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Raised when an iterate or objective becomes NaN/Inf.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace sapphire
