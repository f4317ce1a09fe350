#pragma once

#include <stdexcept>
#include <string>

namespace dan {

enum class ErrorKind {
  kDimension,
  kNumeric,
  kParameter,
  kConfig,
  kConfigMismatch,
  kPrecondition,
  kContract,
  kIo,
  kCorruptFile,
  kVersionMismatch,
  kUndefinedMetric,
  kMalformedInput,
};

const char* ErrorKindName(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void Fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void Require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) Fail(kind, message);
}

}  // namespace dan
