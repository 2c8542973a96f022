#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace csm {

enum class ErrorCode {
  kInvalidArgument,
  kDegenerateFace,
  kIndexOutOfRange,
  kDimensionMismatch,
  kTopologyMismatch,
  kTopologyCollapse,
  kDegenerateAlignment,
  kDomain,
  kZeroVariance,
  kNonFinite,
  kParse,
  kIo,
  kUnknownNode,
  kConfig,
  kDivergence,
  kChecksum,
};

/// Stable machine-readable tag, e.g. "E_PARSE".
std::string_view error_tag(ErrorCode code);

/// Whether an error of this kind was caused by user input (bad file, bad
/// config, unknown node) as opposed to an internal failure.
bool is_user_error(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace csm
