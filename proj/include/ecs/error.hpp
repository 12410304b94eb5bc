#pragma once

#include <stdexcept>
#include <string>

namespace ecs {

enum class ErrorCode {
  invalid_argument,
  io,
  format,
  checksum,
  version,
  shape,
  numeric,
  layout,
  config,
};

const char* to_string(ErrorCode code) noexcept;

/// Base exception for every failure raised by the library. The code maps
/// one-to-one onto the status values of the C API.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace ecs
