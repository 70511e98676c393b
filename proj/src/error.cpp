#include "mvcl/error.hpp"

namespace mvcl {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument:
      return "invalid-argument";
    case ErrorKind::Config:
      return "config";
    case ErrorKind::Shape:
      return "shape";
    case ErrorKind::Numeric:
      return "numeric";
    case ErrorKind::DegenerateInput:
      return "degenerate-input";
    case ErrorKind::BatchTooSmall:
      return "batch-too-small";
    case ErrorKind::DegenerateBatch:
      return "degenerate-batch";
    case ErrorKind::Label:
      return "label";
    case ErrorKind::Io:
      return "io";
    case ErrorKind::BadMagic:
      return "bad-magic";
    case ErrorKind::Truncated:
      return "truncated";
    case ErrorKind::CountMismatch:
      return "count-mismatch";
    case ErrorKind::Version:
      return "version";
    case ErrorKind::Fingerprint:
      return "fingerprint";
    case ErrorKind::Parse:
      return "parse";
    case ErrorKind::MissingCheckpoint:
      return "missing-checkpoint";
  }
  return "unknown";
}

void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace mvcl
