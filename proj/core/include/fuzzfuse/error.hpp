#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fuzzfuse {

enum class ErrorCode {
  kInvalidArgument,  // precondition or shape violation
  kDegenerateInput,  // input admits no well-defined result
  kNumeric,          // divergence, non-convergence, non-finite values
  kIndeterminate,    // a scan whose slices carry no usable evidence
  kIo,               // missing or unreadable file
  kParse,            // malformed file content
  kConfig,           // invalid configuration
};

std::string_view to_string(ErrorCode code);

/// Library-wide exception. Every error raised by fuzzfuse carries a code so
/// callers (notably the CLI) can map failures to exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace fuzzfuse
