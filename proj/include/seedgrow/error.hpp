#pragma once

#include <stdexcept>
#include <string>

namespace seedgrow {

enum class ErrorKind {
  kConfig,   // invalid configuration or arguments
  kData,     // malformed files, dimension mismatches, out-of-range indices
  kNumeric,  // divergence, NaN losses
};

/// Exception carrying a machine-readable kind and, when applicable, the
/// name of the offending field.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message, std::string field = {})
      : std::runtime_error(message), kind_(kind), field_(std::move(field)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorKind kind_;
  std::string field_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kData: return "data";
    case ErrorKind::kNumeric: return "numeric";
  }
  return "unknown";
}

// Process exit code for each error kind.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return 2;
    case ErrorKind::kData: return 3;
    case ErrorKind::kNumeric: return 4;
  }
  return 1;
}

[[noreturn]] inline void fail(ErrorKind kind, std::string message, std::string field = {}) {
  throw Error(kind, std::move(message), std::move(field));
}

}  // namespace seedgrow
