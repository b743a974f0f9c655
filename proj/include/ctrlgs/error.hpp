#pragma once

#include <stdexcept>
#include <string>

namespace ctrlgs {

/// Failure classes surfaced to callers and, through the CLI, as a single
/// machine-parseable token on stderr.
enum class ErrorKind {
  kInvalidParameter,
  kIngestion,
  kUsage,
  kLoad,
  kConfig,
  kNumeric,
  kIo,
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace ctrlgs
