#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cpcssl {

/// Machine-readable failure category. The CLI prints it as `error[<code>]`.
enum class ErrorCode {
  shape_mismatch,
  invalid_argument,
  out_of_range,
  io,
  format,
  checksum,
  version,
  config,
  non_finite,
  incompatible,
  verification,
  usage,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace cpcssl
