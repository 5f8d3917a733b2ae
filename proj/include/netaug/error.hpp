#pragma once

#include <stdexcept>
#include <string>

namespace netaug {

enum class ErrorKind {
  dimension,  // shape mismatch between operands
  index,      // value outside a valid index range (labels, classes)
  contract,   // API misuse: non-scalar loss, config/grid mismatch
  config,     // invalid user configuration
  numeric,    // NaN/Inf encountered in loss or gradients
  parse,      // malformed input file contents
  io,         // file system failure
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::index: return "index error";
    case ErrorKind::contract: return "contract error";
    case ErrorKind::config: return "config error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::parse: return "parse error";
    case ErrorKind::io: return "io error";
  }
  return "error";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Process exit code for an error kind: 2 config, 3 runtime/numeric, 4 I/O or
/// malformed data file.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config:
      return 2;
    case ErrorKind::parse:
    case ErrorKind::io:
      return 4;
    default:
      return 3;
  }
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace netaug
