#pragma once

#include <stdexcept>
#include <string>

namespace carve {

// Input violates a documented precondition (bad flag, bad range, bad shape).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ParseErrorKind {
  BadMagic,
  UnsupportedVersion,
  BadHeader,
  Truncated,
  TrailingBytes,
  NonContiguousSteps,
  DuplicateKey,
  InvalidWeight,
  ZeroMap,
  BadImage,
  BadCsv,
};

const char* to_string(ParseErrorKind kind) noexcept;

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ParseErrorKind kind() const noexcept { return kind_; }

 private:
  ParseErrorKind kind_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace carve
