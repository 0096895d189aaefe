#include "idpose/errors.hpp"

namespace idpose {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kDegenerateRadius: return "degenerate_radius";
    case ErrorCode::kSingularOrientation: return "singular_orientation";
    case ErrorCode::kUnknownView: return "unknown_view";
    case ErrorCode::kBackendUnavailable: return "backend_unavailable";
    case ErrorCode::kRemoteEval: return "remote_eval";
    case ErrorCode::kExplorationFailed: return "exploration_failed";
    case ErrorCode::kNonFiniteGradient: return "non_finite_gradient";
    case ErrorCode::kEmptyMask: return "empty_mask";
    case ErrorCode::kEvaluationUnavailable: return "evaluation_unavailable";
    case ErrorCode::kValidation: return "validation";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kProtocol: return "protocol";
  }
  return "unknown";
}

namespace {

std::string JoinFields(const std::vector<std::string>& fields) {
  std::string out = "invalid fields:";
  for (const auto& f : fields) {
    out += ' ';
    out += f;
  }
  return out;
}

}  // namespace

ValidationError::ValidationError(std::vector<std::string> fields)
    : Error(ErrorCode::kValidation, JoinFields(fields)),
      fields_(std::move(fields)) {}

}  // namespace idpose
