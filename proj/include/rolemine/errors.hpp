// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include <stdexcept>
#include <string>

namespace rolemine {

// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible matrix/vector shapes. The message names both shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A parameter or input value violates its contract (range, emptiness, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed input file. Carries file name and 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : Error(file + ":" + std::to_string(line) + ": " + what),
        file_(file),
        line_(line) {}
  explicit ParseError(const std::string& what) : Error(what), file_(), line_(0) {}

  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

inline std::string shape_string(std::size_t rows, std::size_t cols) {
  return std::to_string(rows) + "x" + std::to_string(cols);
}

}  // namespace rolemine
