#pragma once

#include <stdexcept>
#include <string>

namespace mvcl {

enum class ErrorKind {
  InvalidArgument,
  Config,
  Shape,
  Numeric,
  DegenerateInput,
  BatchTooSmall,
  DegenerateBatch,
  Label,
  Io,
  BadMagic,
  Truncated,
  CountMismatch,
  Version,
  Fingerprint,
  Parse,
  MissingCheckpoint,
};

const char* to_string(ErrorKind kind);

// Every failure raised by the library carries one of the kinds above so the
// C API can map it onto a stable status code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

}  // namespace mvcl
