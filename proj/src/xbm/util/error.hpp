#pragma once

#include <stdexcept>
#include <string>

namespace xbm {

/// Error categories. The numeric values of the first four are the process
/// exit codes used by the command-line tool.
enum class ErrorKind {
  config = 2,
  data = 3,
  numeric = 4,
  checksum = 5,
  shape = 10,
  state = 11,
  io = 12,
  invalid_argument = 13,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) throw Error(kind, message);
}

}  // namespace xbm
