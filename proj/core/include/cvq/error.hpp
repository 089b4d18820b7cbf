#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cvq {

/// Error categories surfaced to callers and printed by the CLI as a
/// machine-parseable class name.
enum class ErrorKind {
  Shape,
  Value,
  Numeric,
  State,
  Io,
  Config,
};

std::string_view error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& detail);

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& detail);

inline void require(bool cond, ErrorKind kind, std::string_view detail) {
  if (!cond) fail(kind, std::string(detail));
}

}  // namespace cvq
