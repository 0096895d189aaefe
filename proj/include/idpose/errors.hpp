#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace idpose {

enum class ErrorCode {
  kShapeMismatch,
  kDegenerateRadius,
  kSingularOrientation,
  kUnknownView,
  kBackendUnavailable,
  kRemoteEval,
  kExplorationFailed,
  kNonFiniteGradient,
  kEmptyMask,
  kEvaluationUnavailable,
  kValidation,
  kIo,
  kProtocol,
};

std::string_view error_code_name(ErrorCode code);

// Base of every error the library throws. The code is stable and is what the
// CLI reports in its machine-readable error payload.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Raised by config/manifest validation. Carries every offending field, not just
// the first one found.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> fields);

  const std::vector<std::string>& fields() const { return fields_; }

 private:
  std::vector<std::string> fields_;
};

}  // namespace idpose
