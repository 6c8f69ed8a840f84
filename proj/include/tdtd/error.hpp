#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tdtd {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not line up; the message names the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed text input. `position` is a character offset or a 1-based line
// number depending on the format; the message says which.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t position)
      : Error(message), position_(position) {}
  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

}  // namespace tdtd
