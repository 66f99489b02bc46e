#include "fuzzfuse/error.hpp"

namespace fuzzfuse {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kDegenerateInput: return "degenerate input";
    case ErrorCode::kNumeric: return "numeric failure";
    case ErrorCode::kIndeterminate: return "indeterminate";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kConfig: return "config error";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(message), code_(code) {}

void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace fuzzfuse
