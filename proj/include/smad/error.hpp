#pragma once

#include <stdexcept>
#include <string>

namespace smad {

/// Failure category. Each maps onto a CLI exit code.
enum class ErrorKind {
  Validation,  // bad config, bad dataset contents, violated precondition
  Parse,       // malformed input file
  Io,          // unreadable/unwritable path
  Numeric,     // infeasible numeric request (perplexity, template count, k)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline Error validation_error(const std::string& what) {
  return Error(ErrorKind::Validation, what);
}
inline Error parse_error(const std::string& what) {
  return Error(ErrorKind::Parse, what);
}
inline Error io_error(const std::string& what) {
  return Error(ErrorKind::Io, what);
}
inline Error numeric_error(const std::string& what) {
  return Error(ErrorKind::Numeric, what);
}

/// Re-labels an error with the pipeline stage it came from, keeping its kind.
inline Error with_stage(const std::string& stage, const Error& e) {
  return Error(e.kind(), stage + ": " + e.what());
}

/// CLI exit code: 2 config/validation, 3 I/O, 4 numeric/infeasibility.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Validation:
    case ErrorKind::Parse:
      return 2;
    case ErrorKind::Io:
      return 3;
    case ErrorKind::Numeric:
      return 4;
  }
  return 1;
}

}  // namespace smad
