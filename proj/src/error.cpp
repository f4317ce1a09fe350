#include "dan/error.hpp"

namespace dan {

const char* ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kNumeric: return "numeric error";
    case ErrorKind::kParameter: return "parameter error";
    case ErrorKind::kConfig: return "config error";
    case ErrorKind::kConfigMismatch: return "config mismatch";
    case ErrorKind::kPrecondition: return "precondition error";
    case ErrorKind::kContract: return "contract error";
    case ErrorKind::kIo: return "I/O error";
    case ErrorKind::kCorruptFile: return "corrupt file";
    case ErrorKind::kVersionMismatch: return "version mismatch";
    case ErrorKind::kUndefinedMetric: return "undefined metric";
    case ErrorKind::kMalformedInput: return "malformed input";
  }
  return "error";
}

}  // namespace dan
